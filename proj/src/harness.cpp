#include "teb/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "teb/objectives.hpp"
#include "teb/optim.hpp"

namespace teb {

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw FormatError("unknown split '" + s + "'");
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  if (s == "nan") return std::nan("");
  double v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw FormatError("not a number: '" + s + "'");
  }
  return v;
}

std::string format_record(const Record& r) {
  std::string out;
  for (const auto& [k, v] : r) {
    require(k.find_first_of(" =\n") == std::string::npos && v.find_first_of(" \n") == std::string::npos,
            "metrics record keys and values must not contain spaces");
    if (!out.empty()) out += ' ';
    out += k + "=" + v;
  }
  return out;
}

std::map<std::string, std::string> parse_record(const std::string& line) {
  std::map<std::string, std::string> kv;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos || eq == 0) throw FormatError("malformed metrics field '" + tok + "'");
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return kv;
}

namespace {

const std::string& field(const std::map<std::string, std::string>& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw FormatError("metrics record lacks '" + key + "'");
  return it->second;
}

}  // namespace

Record EpochRecord::to_record() const {
  return {{"type", "epoch"},
          {"epoch", std::to_string(epoch)},
          {"beta", format_double(beta)},
          {"loss", format_double(loss)},
          {"kl", format_double(kl)},
          {"loglik", format_double(loglik)},
          {"val_te", format_double(val_te)},
          {"val_loglik", format_double(val_loglik)},
          {"val_accuracy", format_double(val_accuracy)}};
}

EpochRecord EpochRecord::from_record(const std::map<std::string, std::string>& kv) {
  EpochRecord e;
  e.epoch = std::stoi(field(kv, "epoch"));
  e.beta = parse_double(field(kv, "beta"));
  e.loss = parse_double(field(kv, "loss"));
  e.kl = parse_double(field(kv, "kl"));
  e.loglik = parse_double(field(kv, "loglik"));
  e.val_te = parse_double(field(kv, "val_te"));
  e.val_loglik = parse_double(field(kv, "val_loglik"));
  e.val_accuracy = parse_double(field(kv, "val_accuracy"));
  return e;
}

Record SweepRecord::to_record() const {
  return {{"type", "sweep"},
          {"beta", format_double(beta)},
          {"seed", std::to_string(seed)},
          {"split", to_string(split)},
          {"te_metric_nats", format_double(te_metric_nats)},
          {"recon_loglik", format_double(recon_loglik)},
          {"task_accuracy", task_accuracy ? format_double(*task_accuracy) : std::string("none")}};
}

SweepRecord SweepRecord::from_record(const std::map<std::string, std::string>& kv) {
  SweepRecord r;
  r.beta = parse_double(field(kv, "beta"));
  r.seed = std::stoull(field(kv, "seed"));
  r.split = split_from_string(field(kv, "split"));
  r.te_metric_nats = parse_double(field(kv, "te_metric_nats"));
  r.recon_loglik = parse_double(field(kv, "recon_loglik"));
  const std::string& acc = field(kv, "task_accuracy");
  if (acc != "none") r.task_accuracy = parse_double(acc);
  require(r.te_metric_nats >= 0, "sweep record: te_metric_nats must be >= 0");
  return r;
}

std::vector<std::map<std::string, std::string>> read_log_records(const std::string& path, const std::string& type) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open metrics log " + path);
  std::vector<std::map<std::string, std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto kv = parse_record(line);
    const auto it = kv.find("type");
    if (it != kv.end() && it->second == type) out.push_back(std::move(kv));
  }
  return out;
}

std::string log_header(const ExperimentConfig& cfg, const std::vector<std::string>& overrides) {
  std::ostringstream out;
  out << "# teb metrics log v1\n";
  for (const auto& o : overrides) out << "# override: " << o << "\n";
  std::istringstream cfg_text(serialize_config(cfg));
  std::string line;
  while (std::getline(cfg_text, line)) out << "# config: " << line << "\n";
  return out.str();
}

ModelShapes dataset_shapes(const DatasetBundle& data) {
  require(data.train.size() > 0, "dataset has an empty train split");
  const int classes = data.cfg.kind == TaskKind::switching_rotation ? data.cfg.num_classes : 0;
  return ModelShapes::from(data.train.batch({0}), data.cfg.kind, classes);
}

ExperimentConfig checkpoint_config(const Archive& ckpt) {
  const auto it = ckpt.attrs.find("format");
  if (it == ckpt.attrs.end() || it->second != "teb-checkpoint") throw FormatError("not a model checkpoint");
  if (ckpt.attr("checkpoint_version") != "1") {
    throw FormatError("unsupported checkpoint version " + ckpt.attr("checkpoint_version"));
  }
  return parse_config_text(ckpt.attr("config"));
}

namespace {

void assign_from_archive(const ParamList<float>& params, const Archive& a) {
  assign_parameters<float>(params, [&](const std::string& name) -> const Tensor<float>* {
    const auto it = a.tensors.find("param." + name);
    return it == a.tensors.end() ? nullptr : &it->second;
  });
}

}  // namespace

std::shared_ptr<JointModel<float>> load_context_module(const Archive& ckpt, const DatasetBundle& data) {
  const ExperimentConfig ccfg = checkpoint_config(ckpt);
  require(ccfg.objective.joint_input == JointInput::y_only &&
              (ccfg.objective.kind == ObjectiveKind::ceb || ccfg.objective.kind == ObjectiveKind::vib),
          "context checkpoint must hold a y_only ceb or vib module");
  std::shared_ptr<Model<float>> m = build_model<float>(ccfg, dataset_shapes(data), 0);
  auto jm = std::dynamic_pointer_cast<JointModel<float>>(m);
  require(jm != nullptr, "context checkpoint does not hold a joint-stream module");
  assign_from_archive(jm->parameters(), ckpt);
  return jm;
}

Archive make_checkpoint(const ExperimentConfig& cfg, const Model<float>& model, std::uint64_t seed, int best_epoch) {
  Archive a;
  a.attrs["format"] = "teb-checkpoint";
  a.attrs["checkpoint_version"] = "1";
  a.attrs["config"] = serialize_config(cfg);
  a.attrs["seed"] = std::to_string(seed);
  a.attrs["best_epoch"] = std::to_string(best_epoch);
  a.attrs["objective"] = to_string(model.kind());
  if (const auto* tc = dynamic_cast<const TebCModel<float>*>(&model)) {
    // The Y module's own config is needed to rebuild its architecture.
    ExperimentConfig ccfg = cfg;
    ccfg.model.latent_dim = tc->context().latent_dim();
    ccfg.objective = ObjectiveSpec{};
    ccfg.objective.kind = tc->context().kind();
    ccfg.objective.joint_input = JointInput::y_only;
    ccfg.objective.gamma = tc->context().gamma();
    a.attrs["context_config"] = serialize_config(ccfg);
  }
  for (const auto& [name, v] : model.parameters()) {
    a.tensors["param." + name] = v.value();
  }
  return a;
}

std::unique_ptr<Model<float>> load_model(const Archive& ckpt, const DatasetBundle& data) {
  const ExperimentConfig cfg = checkpoint_config(ckpt);
  const ModelShapes shapes = dataset_shapes(data);
  std::shared_ptr<JointModel<float>> context;
  if (cfg.objective.kind == ObjectiveKind::teb_c) {
    const ExperimentConfig ccfg = parse_config_text(ckpt.attr("context_config"));
    context = std::dynamic_pointer_cast<JointModel<float>>(
        std::shared_ptr<Model<float>>(build_model<float>(ccfg, shapes, 0)));
    require(context != nullptr, "checkpoint context is not a joint-stream module");
  }
  auto model = build_model<float>(cfg, shapes, 0, context);
  assign_from_archive(model->parameters(), ckpt);
  return model;
}

EvalContext make_eval_context(const DatasetBundle& data, std::uint64_t seed,
                              std::shared_ptr<const ColorClassifier> classifier) {
  EvalContext ctx;
  ctx.seed = seed;
  if (data.cfg.kind == TaskKind::switching_rotation) ctx.templates = &data.templates;
  if (data.cfg.kind == TaskKind::needle_haystack) {
    ctx.classifier = classifier ? classifier : std::make_shared<const ColorClassifier>(data.train, data.val, seed);
  }
  return ctx;
}

namespace {

double selection_score(const EvalMetrics& m) { return m.has_accuracy() ? m.accuracy : m.recon_loglik; }

std::vector<Tensor<float>> snapshot(const ParamList<float>& params) {
  std::vector<Tensor<float>> out;
  for (const auto& [name, v] : params) out.push_back(v.value());
  return out;
}

void restore(const ParamList<float>& params, const std::vector<Tensor<float>>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Var<float> h = params[i].second;
    h.mutable_value() = values[i];
  }
}

}  // namespace

TrainResult train(const ExperimentConfig& cfg, const DatasetBundle& data, std::uint64_t seed,
                  const TrainOptions& opts) {
  cfg.validate();
  require(cfg.task.kind == data.cfg.kind, "config task kind " + to_string(cfg.task.kind) +
                                              " does not match dataset task " + to_string(data.cfg.kind));
  const ModelShapes shapes = dataset_shapes(data);
  std::shared_ptr<JointModel<float>> context;
  std::string context_config;
  if (cfg.objective.kind == ObjectiveKind::teb_c) {
    Archive ca;
    if (opts.context) {
      ca = *opts.context;
    } else {
      require(!cfg.objective.context_checkpoint.empty(), "teb_c needs objective.context_checkpoint");
      ca = Archive::load(cfg.objective.context_checkpoint);
    }
    context = load_context_module(ca, data);
    context_config = ca.attr("config");
  }
  TrainResult result;
  result.model = build_model<float>(cfg, shapes, seed, context);
  Model<float>& model = *result.model;
  const ParamList<float> params = model.parameters();
  Adam<float> opt(params, {cfg.optimizer.lr, cfg.optimizer.beta1, cfg.optimizer.beta2, cfg.optimizer.eps});

  EvalContext ectx = make_eval_context(data, seed, opts.classifier);
  ectx.batch_size = cfg.train.eval_batch_size;

  const CounterRng rng(seed, 0x747261696e);
  const Index n = data.train.size();
  const Index bs = cfg.train.batch_size;
  const Index d = model.latent_dim();
  std::vector<Index> order(static_cast<std::size_t>(n));
  double best = -std::numeric_limits<double>::infinity();
  std::vector<Tensor<float>> best_params = snapshot(params);

  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    const double beta = cfg.beta_at(epoch);
    CounterRng er = rng.substream(static_cast<std::uint64_t>(epoch));
    std::iota(order.begin(), order.end(), 0);
    er.shuffle(order);
    double sum_loss = 0, sum_kl = 0, sum_ll = 0;
    int batches = 0;
    for (Index start = 0; start < n; start += bs) {
      if (opts.max_batches_per_epoch > 0 && batches >= opts.max_batches_per_epoch) break;
      const Index count = std::min(bs, n - start);
      const std::vector<Index> idx(order.begin() + start, order.begin() + start + count);
      const StreamBatch<float> b = data.train.batch(idx);
      Tensor<float> eps(Shape{count, d});
      for (Index k = 0; k < eps.size(); ++k) eps[k] = static_cast<float>(er.normal());
      opt.zero_grad();
      const LossBreakdown<float> l = objective_loss(model, b, beta, cfg.objective.gamma, eps);
      const double lv = l.total_value();
      if (!std::isfinite(lv)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batches) + " (beta " + format_double(beta) + ", kl " +
                           format_double(l.kl_value()) + ", loglik " + format_double(l.loglik_value()) + ")");
      }
      backward(l.total);
      opt.step();
      sum_loss += lv;
      sum_kl += l.kl_value();
      sum_ll += l.loglik_value();
      ++batches;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.beta = beta;
    rec.loss = sum_loss / batches;
    rec.kl = sum_kl / batches;
    rec.loglik = sum_ll / batches;
    const EvalMetrics vm = evaluate(model, data.val, ectx);
    rec.val_te = vm.te_metric;
    rec.val_loglik = vm.recon_loglik;
    rec.val_accuracy = vm.accuracy;
    if (epoch == 0) result.epoch0_loss = rec.loss;
    const double score = selection_score(vm);
    if (score > best || epoch == 0) {
      best = score;
      result.best_epoch = epoch;
      best_params = snapshot(params);
    }
    result.epochs.push_back(rec);
    if (opts.log) *opts.log << format_record(rec.to_record()) << "\n" << std::flush;
    if (opts.progress) {
      *opts.progress << "epoch " << epoch << " beta " << beta << " loss " << rec.loss << " kl " << rec.kl
                     << " loglik " << rec.loglik << " val_te " << rec.val_te << " val_loglik " << rec.val_loglik;
      if (vm.has_accuracy()) *opts.progress << " val_acc " << vm.accuracy;
      *opts.progress << "\n" << std::flush;
    }
  }
  restore(params, best_params);
  result.checkpoint = make_checkpoint(cfg, model, seed, result.best_epoch);
  if (!context_config.empty()) result.checkpoint.attrs["context_config"] = context_config;
  return result;
}

std::vector<SweepRecord> beta_sweep(const ExperimentConfig& cfg, const DatasetBundle& data,
                                    const std::vector<double>& grid, const std::vector<std::uint64_t>& seeds,
                                    const SweepOptions& opts) {
  require(!grid.empty(), "beta sweep: empty grid");
  require(!seeds.empty(), "beta sweep: no seeds");
  for (double b : grid) require(b > 0, "beta sweep: every beta must be > 0");
  std::vector<std::pair<double, std::uint64_t>> jobs;
  for (double b : grid) {
    for (auto s : seeds) jobs.emplace_back(b, s);
  }
  std::shared_ptr<const ColorClassifier> clf;
  if (data.cfg.kind == TaskKind::needle_haystack) clf = std::make_shared<const ColorClassifier>(data.train, data.val, 0);

  const int workers = std::max(1, std::min<int>(opts.workers, static_cast<int>(jobs.size())));
  if (!opts.log_dir.empty()) std::filesystem::create_directories(opts.log_dir);
  std::vector<SweepRecord> out(jobs.size());
  std::vector<std::string> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex progress_mu;

  auto worker = [&](int w) {
    std::ofstream wlog;
    if (!opts.log_dir.empty()) {
      wlog.open(opts.log_dir + "/worker" + std::to_string(w) + ".log");
    }
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      const auto [beta, seed] = jobs[j];
      try {
        ExperimentConfig c = cfg;
        c.objective.beta = beta;
        c.train.beta_schedule.clear();
        TrainOptions to;
        to.classifier = clf;
        to.context = opts.context;
        to.max_batches_per_epoch = opts.max_batches_per_epoch;
        TrainResult r = train(c, data, seed, to);
        EvalContext ectx = make_eval_context(data, seed, clf);
        ectx.batch_size = c.train.eval_batch_size;
        const EvalMetrics m = evaluate(*r.model, data.test, ectx);
        SweepRecord rec;
        rec.beta = beta;
        rec.seed = seed;
        rec.split = Split::test;
        rec.te_metric_nats = std::max(0.0, m.te_metric);
        rec.recon_loglik = m.recon_loglik;
        if (m.has_accuracy()) rec.task_accuracy = m.accuracy;
        out[j] = rec;
        if (wlog) wlog << format_record(rec.to_record()) << "\n" << std::flush;
        if (opts.progress) {
          std::lock_guard<std::mutex> lk(progress_mu);
          *opts.progress << "beta " << beta << " seed " << seed << " te " << rec.te_metric_nats << " loglik "
                         << rec.recon_loglik;
          if (rec.task_accuracy) *opts.progress << " acc " << *rec.task_accuracy;
          *opts.progress << "\n" << std::flush;
        }
      } catch (const std::exception& e) {
        errors[j] = "beta " + format_double(beta) + ", seed " + std::to_string(seed) + ": " + e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(worker, w);
  worker(0);
  for (auto& t : pool) t.join();

  for (const auto& e : errors) {
    if (!e.empty()) throw NumericError("sweep run failed (" + e + ")");
  }
  if (!opts.log_dir.empty()) {
    std::ofstream merged(opts.log_dir + "/sweep.log");
    merged << log_header(cfg, {});
    for (const auto& r : out) merged << format_record(r.to_record()) << "\n";
  }
  return out;
}

std::vector<BetaAggregate> aggregate_sweep(const std::vector<SweepRecord>& records) {
  std::map<double, std::vector<const SweepRecord*>> by_beta;
  for (const auto& r : records) by_beta[r.beta].push_back(&r);
  auto stats = [](const std::vector<double>& v) -> std::pair<double, double> {
    if (v.empty()) return {EvalMetrics::kNaN, EvalMetrics::kNaN};
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    return {m, v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0};
  };
  std::vector<BetaAggregate> out;
  for (const auto& [beta, rs] : by_beta) {
    std::vector<double> te, ll, acc;
    for (const auto* r : rs) {
      te.push_back(r->te_metric_nats);
      ll.push_back(r->recon_loglik);
      if (r->task_accuracy) acc.push_back(*r->task_accuracy);
    }
    BetaAggregate a;
    a.beta = beta;
    a.n = static_cast<int>(rs.size());
    std::tie(a.te_mean, a.te_std) = stats(te);
    std::tie(a.loglik_mean, a.loglik_std) = stats(ll);
    std::tie(a.accuracy_mean, a.accuracy_std) = stats(acc);
    out.push_back(a);
  }
  return out;
}

double interpolate_beta_star(const std::vector<std::pair<double, double>>& pairs, double true_te) {
  require(!pairs.empty(), "interpolate_beta_star: no points");
  for (std::size_t i = 1; i < pairs.size(); ++i) {
    require(pairs[i].first > pairs[i - 1].first, "interpolate_beta_star: pairs must be sorted by beta");
  }
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].second == true_te) return pairs[i].first;
    if (i + 1 == pairs.size()) break;
    const auto [b0, t0] = pairs[i];
    const auto [b1, t1] = pairs[i + 1];
    if (t1 == true_te) return b1;
    if ((t0 - true_te) * (t1 - true_te) < 0) {
      return b0 + (b1 - b0) * (true_te - t0) / (t1 - t0);
    }
  }
  throw ContractError("beta* not bracketed: no grid interval crosses te = " + format_double(true_te));
}

}  // namespace teb
