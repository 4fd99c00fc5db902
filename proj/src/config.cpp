#include "teb/config.hpp"

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace teb {

namespace {

template <typename E>
struct EnumName {
  E value;
  const char* name;
};

constexpr EnumName<TaskKind> kTaskNames[] = {
    {TaskKind::switching_rotation, "switching_rotation"},
    {TaskKind::needle_haystack, "needle_haystack"},
    {TaskKind::multi_sinusoids, "multi_sinusoids"},
};

constexpr EnumName<DecoderKind> kDecoderNames[] = {
    {DecoderKind::positional_conv_image, "positional_conv_image"},
    {DecoderKind::ode_timeseries, "ode_timeseries"},
    {DecoderKind::vector_sequence, "vector_sequence"},
};

constexpr EnumName<ObjectiveKind> kObjectiveNames[] = {
    {ObjectiveKind::teb, "teb"},
    {ObjectiveKind::teb_c, "teb_c"},
    {ObjectiveKind::ceb, "ceb"},
    {ObjectiveKind::vib, "vib"},
    {ObjectiveKind::deterministic, "deterministic"},
    {ObjectiveKind::deterministic_joint, "deterministic_joint"},
};

constexpr EnumName<JointInput> kJointNames[] = {
    {JointInput::unified, "unified"},
    {JointInput::y_only, "y_only"},
};

template <typename E, std::size_t N>
std::string enum_to_string(const EnumName<E> (&names)[N], E v) {
  for (const auto& n : names) {
    if (n.value == v) {
      return n.name;
    }
  }
  return "?";
}

template <typename E, std::size_t N>
E enum_from_string(const EnumName<E> (&names)[N], const std::string& s, const char* what) {
  for (const auto& n : names) {
    if (s == n.name) {
      return n.value;
    }
  }
  throw ContractError(std::string("unknown ") + what + " '" + s + "'");
}

// ------------------------------------------------------------------ value codecs

std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

double parse_double(const std::string& key, const std::string& s) {
  const std::string t = boost::trim_copy(s);
  double v = 0.0;
  auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || end != t.data() + t.size() || t.empty()) {
    throw FormatError("config key '" + key + "': expected a number, got '" + s + "'");
  }
  return v;
}

long long parse_int(const std::string& key, const std::string& s) {
  const std::string t = boost::trim_copy(s);
  long long v = 0;
  auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || end != t.data() + t.size() || t.empty()) {
    throw FormatError("config key '" + key + "': expected an integer, got '" + s + "'");
  }
  return v;
}

std::uint64_t parse_u64(const std::string& key, const std::string& s) {
  const std::string t = boost::trim_copy(s);
  std::uint64_t v = 0;
  auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || end != t.data() + t.size() || t.empty()) {
    throw FormatError("config key '" + key + "': expected an unsigned integer, got '" + s + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  const std::string t = boost::to_lower_copy(boost::trim_copy(s));
  if (t == "true" || t == "1" || t == "yes" || t == "on") {
    return true;
  }
  if (t == "false" || t == "0" || t == "no" || t == "off") {
    return false;
  }
  throw FormatError("config key '" + key + "': expected a boolean, got '" + s + "'");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> parts;
  const std::string t = boost::trim_copy(s);
  if (t.empty()) {
    return parts;
  }
  boost::split(parts, t, boost::is_any_of(","));
  for (auto& p : parts) {
    boost::trim(p);
  }
  return parts;
}

template <typename T, typename F>
std::string join(const std::vector<T>& v, F&& f) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out += (i ? "," : "") + f(v[i]);
  }
  return out;
}

// ------------------------------------------------------------------ field table

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <typename M>
Field dbl(std::string sec, std::string key, M member) {
  const std::string full = sec + "." + key;
  return {sec, key, [member](const ExperimentConfig& c) { return fmt_double(member(const_cast<ExperimentConfig&>(c))); },
          [member, full](ExperimentConfig& c, const std::string& s) { member(c) = parse_double(full, s); }};
}

template <typename M>
Field integer(std::string sec, std::string key, M member) {
  const std::string full = sec + "." + key;
  return {sec, key,
          [member](const ExperimentConfig& c) {
            return std::to_string(member(const_cast<ExperimentConfig&>(c)));
          },
          [member, full](ExperimentConfig& c, const std::string& s) {
            using T = std::remove_reference_t<decltype(member(c))>;
            member(c) = static_cast<T>(parse_int(full, s));
          }};
}

template <typename M>
Field boolean(std::string sec, std::string key, M member) {
  const std::string full = sec + "." + key;
  return {sec, key,
          [member](const ExperimentConfig& c) {
            return std::string(member(const_cast<ExperimentConfig&>(c)) ? "true" : "false");
          },
          [member, full](ExperimentConfig& c, const std::string& s) { member(c) = parse_bool(full, s); }};
}

template <typename M>
Field text(std::string sec, std::string key, M member) {
  return {sec, key, [member](const ExperimentConfig& c) { return member(const_cast<ExperimentConfig&>(c)); },
          [member](ExperimentConfig& c, const std::string& s) { member(c) = boost::trim_copy(s); }};
}

template <typename M>
Field index_list(std::string sec, std::string key, M member) {
  const std::string full = sec + "." + key;
  return {sec, key,
          [member](const ExperimentConfig& c) {
            return join(member(const_cast<ExperimentConfig&>(c)),
                        [](Index v) { return std::to_string(v); });
          },
          [member, full](ExperimentConfig& c, const std::string& s) {
            auto& out = member(c);
            out.clear();
            for (const auto& p : split_list(s)) {
              out.push_back(static_cast<Index>(parse_int(full, p)));
            }
          }};
}

template <typename M>
Field double_list(std::string sec, std::string key, M member) {
  const std::string full = sec + "." + key;
  return {sec, key,
          [member](const ExperimentConfig& c) {
            return join(member(const_cast<ExperimentConfig&>(c)), fmt_double);
          },
          [member, full](ExperimentConfig& c, const std::string& s) {
            auto& out = member(c);
            out.clear();
            for (const auto& p : split_list(s)) {
              out.push_back(parse_double(full, p));
            }
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    using C = ExperimentConfig;
    // task
    f.push_back({"task", "kind", [](const C& c) { return to_string(c.task.kind); },
                 [](C& c, const std::string& s) { c.task.kind = task_kind_from_string(boost::trim_copy(s)); }});
    f.push_back(dbl("task", "switch_prob", [](C& c) -> double& { return c.task.switch_prob; }));
    f.push_back(integer("task", "num_classes", [](C& c) -> int& { return c.task.num_classes; }));
    f.push_back(integer("task", "examples_per_class", [](C& c) -> int& { return c.task.examples_per_class; }));
    f.push_back(text("task", "digits_path", [](C& c) -> std::string& { return c.task.digits_path; }));
    f.push_back(integer("task", "distractors", [](C& c) -> int& { return c.task.distractors; }));
    f.push_back(integer("task", "image_size", [](C& c) -> int& { return c.task.image_size; }));
    f.push_back(integer("task", "ball_radius", [](C& c) -> int& { return c.task.ball_radius; }));
    f.push_back(integer("task", "num_balls", [](C& c) -> int& { return c.task.num_balls; }));
    f.push_back(integer("task", "num_points", [](C& c) -> int& { return c.task.num_points; }));
    f.push_back(integer("task", "history", [](C& c) -> int& { return c.task.history; }));
    f.push_back(dbl("task", "sample_rate", [](C& c) -> double& { return c.task.sample_rate; }));
    f.push_back(double_list("task", "frequencies", [](C& c) -> std::vector<double>& { return c.task.frequencies; }));
    f.push_back(dbl("task", "freq_noise", [](C& c) -> double& { return c.task.freq_noise; }));
    f.push_back(integer("task", "rk4_substeps", [](C& c) -> int& { return c.task.rk4_substeps; }));
    f.push_back(integer("task", "n_train", [](C& c) -> int& { return c.task.n_train; }));
    f.push_back(integer("task", "n_val", [](C& c) -> int& { return c.task.n_val; }));
    f.push_back(integer("task", "n_test", [](C& c) -> int& { return c.task.n_test; }));
    f.push_back({"task", "seed", [](const C& c) { return std::to_string(c.task.seed); },
                 [](C& c, const std::string& s) { c.task.seed = parse_u64("task.seed", s); }});
    // model
    f.push_back(integer("model", "latent_dim", [](C& c) -> Index& { return c.model.latent_dim; }));
    f.push_back(text("model", "y_encoder", [](C& c) -> std::string& { return c.model.y_encoder; }));
    f.push_back(text("model", "x_encoder", [](C& c) -> std::string& { return c.model.x_encoder; }));
    f.push_back(text("model", "aggregator", [](C& c) -> std::string& { return c.model.aggregator; }));
    f.push_back(text("model", "decoder", [](C& c) -> std::string& { return c.model.decoder; }));
    f.push_back(text("model", "output", [](C& c) -> std::string& { return c.model.output; }));
    f.push_back(dbl("model", "fixed_variance", [](C& c) -> double& { return c.model.fixed_variance; }));
    f.push_back(index_list("model", "conv_channels", [](C& c) -> std::vector<Index>& { return c.model.conv_channels; }));
    f.push_back(index_list("model", "decoder_channels", [](C& c) -> std::vector<Index>& { return c.model.decoder_channels; }));
    f.push_back(index_list("model", "decoder_kernels", [](C& c) -> std::vector<Index>& { return c.model.decoder_kernels; }));
    f.push_back(integer("model", "decoder_final_kernel", [](C& c) -> Index& { return c.model.decoder_final_kernel; }));
    f.push_back(integer("model", "combiner_width", [](C& c) -> Index& { return c.model.combiner_width; }));
    f.push_back(boolean("model", "combiner_mlp", [](C& c) -> bool& { return c.model.combiner_mlp; }));
    f.push_back(integer("model", "embedding_dim", [](C& c) -> Index& { return c.model.embedding_dim; }));
    f.push_back(integer("model", "ode_width", [](C& c) -> Index& { return c.model.ode_width; }));
    f.push_back(dbl("model", "ode_step", [](C& c) -> double& { return c.model.ode_step; }));
    // objective
    f.push_back({"objective", "kind", [](const C& c) { return to_string(c.objective.kind); },
                 [](C& c, const std::string& s) {
                   c.objective.kind = objective_kind_from_string(boost::trim_copy(s));
                 }});
    f.push_back(dbl("objective", "beta", [](C& c) -> double& { return c.objective.beta; }));
    f.push_back(dbl("objective", "gamma", [](C& c) -> double& { return c.objective.gamma; }));
    f.push_back({"objective", "joint_input", [](const C& c) { return to_string(c.objective.joint_input); },
                 [](C& c, const std::string& s) {
                   c.objective.joint_input = joint_input_from_string(boost::trim_copy(s));
                 }});
    f.push_back(text("objective", "context_checkpoint",
                     [](C& c) -> std::string& { return c.objective.context_checkpoint; }));
    f.push_back(boolean("objective", "context_decoder", [](C& c) -> bool& { return c.objective.context_decoder; }));
    f.push_back(boolean("objective", "cotrain_context", [](C& c) -> bool& { return c.objective.cotrain_context; }));
    // optimizer
    f.push_back(dbl("optimizer", "lr", [](C& c) -> double& { return c.optimizer.lr; }));
    f.push_back(dbl("optimizer", "beta1", [](C& c) -> double& { return c.optimizer.beta1; }));
    f.push_back(dbl("optimizer", "beta2", [](C& c) -> double& { return c.optimizer.beta2; }));
    f.push_back(dbl("optimizer", "eps", [](C& c) -> double& { return c.optimizer.eps; }));
    // train
    f.push_back(integer("train", "epochs", [](C& c) -> int& { return c.train.epochs; }));
    f.push_back(integer("train", "batch_size", [](C& c) -> int& { return c.train.batch_size; }));
    f.push_back(integer("train", "eval_batch_size", [](C& c) -> int& { return c.train.eval_batch_size; }));
    f.push_back({"train", "beta_schedule",
                 [](const C& c) {
                   return join(c.train.beta_schedule, [](const std::pair<int, double>& p) {
                     return std::to_string(p.first) + ":" + fmt_double(p.second);
                   });
                 },
                 [](C& c, const std::string& s) {
                   c.train.beta_schedule.clear();
                   for (const auto& item : split_list(s)) {
                     const auto colon = item.find(':');
                     if (colon == std::string::npos) {
                       throw FormatError("config key 'train.beta_schedule': expected epoch:beta, got '" +
                                         item + "'");
                     }
                     c.train.beta_schedule.emplace_back(
                         static_cast<int>(parse_int("train.beta_schedule", item.substr(0, colon))),
                         parse_double("train.beta_schedule", item.substr(colon + 1)));
                   }
                 }});
    f.push_back({"train", "seeds",
                 [](const C& c) {
                   return join(c.train.seeds, [](std::uint64_t s) { return std::to_string(s); });
                 },
                 [](C& c, const std::string& s) {
                   c.train.seeds.clear();
                   for (const auto& p : split_list(s)) {
                     c.train.seeds.push_back(parse_u64("train.seeds", p));
                   }
                 }});
    // sweep
    f.push_back(double_list("sweep", "betas", [](C& c) -> std::vector<double>& { return c.sweep.betas; }));
    f.push_back(integer("sweep", "workers", [](C& c) -> int& { return c.sweep.workers; }));
    return f;
  }();
  return table;
}

const Field* find_field(const std::string& section, const std::string& key) {
  for (const auto& f : fields()) {
    if (f.section == section && f.key == key) {
      return &f;
    }
  }
  return nullptr;
}

}  // namespace

std::string to_string(TaskKind k) { return enum_to_string(kTaskNames, k); }
TaskKind task_kind_from_string(const std::string& s) {
  return enum_from_string(kTaskNames, s, "task kind");
}
std::string to_string(DecoderKind k) { return enum_to_string(kDecoderNames, k); }
DecoderKind decoder_kind_from_string(const std::string& s) {
  return enum_from_string(kDecoderNames, s, "decoder kind");
}
std::string to_string(ObjectiveKind k) { return enum_to_string(kObjectiveNames, k); }
ObjectiveKind objective_kind_from_string(const std::string& s) {
  return enum_from_string(kObjectiveNames, s, "objective kind");
}
std::string to_string(JointInput k) { return enum_to_string(kJointNames, k); }
JointInput joint_input_from_string(const std::string& s) {
  return enum_from_string(kJointNames, s, "joint input");
}

int TaskConfig::resolved_image_size() const {
  if (image_size > 0) {
    return image_size;
  }
  return kind == TaskKind::needle_haystack ? 16 : 14;
}

void TaskConfig::validate() const {
  require(switch_prob >= 0.0 && switch_prob <= 1.0, "task.switch_prob must lie in [0, 1]");
  require(num_classes >= 2, "task.num_classes must be >= 2");
  require(examples_per_class >= 1, "task.examples_per_class must be >= 1");
  require(distractors >= 0, "task.distractors must be >= 0");
  require(image_size >= 0, "task.image_size must be >= 0");
  require(ball_radius >= 1 && num_balls >= 1, "task: ball_radius and num_balls must be >= 1");
  require(n_train >= 1 && n_val >= 1 && n_test >= 1, "task: split sizes must be >= 1");
  require(history >= 1 && num_points > history, "task: need 1 <= history < num_points");
  require(sample_rate > 0.0, "task.sample_rate must be > 0");
  require(!frequencies.empty(), "task.frequencies must be nonempty");
  require(freq_noise >= 0.0, "task.freq_noise must be >= 0");
  require(rk4_substeps >= 1, "task.rk4_substeps must be >= 1");
}

void ModelSpec::validate() const {
  require(latent_dim > 0, "model.latent_dim must be > 0");
  require(aggregator == "recurrent", "model.aggregator: only 'recurrent' is supported");
  require(fixed_variance > 0.0, "model.fixed_variance must be > 0");
  require(decoder_channels.size() == decoder_kernels.size(),
          "model.decoder_kernels needs one entry per decoder channel");
  for (Index k : decoder_kernels) {
    require(k >= 1 && k % 2 == 1, "model.decoder_kernels must be odd");
  }
  require(decoder_final_kernel >= 1 && decoder_final_kernel % 2 == 1,
          "model.decoder_final_kernel must be odd");
  require(ode_width > 0 && ode_step > 0.0, "model: ode_width and ode_step must be > 0");
  require(combiner_width >= 0 && embedding_dim >= 0, "model: widths must be >= 0");
}

void ObjectiveSpec::validate() const {
  require(beta > 0.0, "objective.beta must be > 0");
  require(kind != ObjectiveKind::ceb || gamma > 0.0, "objective.gamma must be > 0 for ceb");
}

void ExperimentConfig::validate() const {
  task.validate();
  model.validate();
  objective.validate();
  require(optimizer.lr > 0.0, "optimizer.lr must be > 0");
  require(train.epochs >= 1, "train.epochs must be >= 1");
  require(train.batch_size >= 1 && train.eval_batch_size >= 1, "train: batch sizes must be >= 1");
  for (std::size_t i = 1; i < train.beta_schedule.size(); ++i) {
    require(train.beta_schedule[i].first > train.beta_schedule[i - 1].first,
            "train.beta_schedule epochs must be increasing");
  }
  for (const auto& [e, b] : train.beta_schedule) {
    require(e >= 0 && b > 0.0, "train.beta_schedule entries need epoch >= 0 and beta > 0");
  }
  require(!train.seeds.empty(), "train.seeds must be nonempty");
  require(sweep.workers >= 1, "sweep.workers must be >= 1");
}

double ExperimentConfig::beta_at(int epoch) const {
  double b = objective.beta;
  for (const auto& [e, v] : train.beta_schedule) {
    if (e <= epoch) {
      b = v;
    }
  }
  return b;
}

ExperimentConfig parse_config_text(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  ExperimentConfig cfg;
  std::set<std::string> seen;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw FormatError("config: key '" + section + "' outside of a section");
    }
    for (const auto& [key, value] : body) {
      const Field* f = find_field(section, key);
      if (f == nullptr) {
        throw FormatError("config: unknown key '" + key + "' in section [" + section + "]");
      }
      f->set(cfg, value.data());
      seen.insert(section + "." + key);
    }
  }
  if (!seen.count("task.kind")) {
    throw FormatError("config: missing required key 'task.kind'");
  }
  if (!seen.count("objective.kind")) {
    throw FormatError("config: missing required key 'objective.kind'");
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw FormatError("config: cannot open '" + path + "'");
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  std::string current;
  for (const auto& f : fields()) {
    if (f.section != current) {
      out << (current.empty() ? "" : "\n") << '[' << f.section << "]\n";
      current = f.section;
    }
    out << f.key << " = " << f.get(cfg) << '\n';
  }
  return out.str();
}

std::string serialize_task_config(const TaskConfig& task) {
  ExperimentConfig cfg;
  cfg.task = task;
  std::ostringstream out;
  out << "[task]\n";
  for (const auto& f : fields()) {
    if (f.section == "task") {
      out << f.key << " = " << f.get(cfg) << '\n';
    }
  }
  return out.str();
}

TaskConfig parse_task_config_text(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw FormatError(std::string("task config: ") + e.what());
  }
  ExperimentConfig cfg;
  for (const auto& [section, body] : tree) {
    if (section != "task") {
      throw FormatError("task config: unexpected section [" + section + "]");
    }
    for (const auto& [key, value] : body) {
      const Field* f = find_field(section, key);
      if (f == nullptr) {
        throw FormatError("task config: unknown key '" + key + "'");
      }
      f->set(cfg, value.data());
    }
  }
  cfg.task.validate();
  return cfg.task;
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ContractError("override must look like section.key=value, got '" + assignment + "'");
  }
  const std::string section = boost::trim_copy(assignment.substr(0, dot));
  const std::string key = boost::trim_copy(assignment.substr(dot + 1, eq - dot - 1));
  const Field* f = find_field(section, key);
  if (f == nullptr) {
    throw ContractError("unknown config key '" + section + "." + key + "'");
  }
  f->set(cfg, assignment.substr(eq + 1));
}

}  // namespace teb
