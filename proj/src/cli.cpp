#include "teb/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "teb/harness.hpp"
#include "teb/infoexact.hpp"
#include "teb/plot.hpp"

namespace teb {

namespace {

namespace fs = std::filesystem;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string env_data_dir() {
  const char* v = std::getenv("TEB_DATA_DIR");
  return v ? std::string(v) : std::string();
}

/// Accepts a full experiment config or a file holding only [task].
TaskConfig load_task_config(const std::string& path) {
  const std::string text = read_file(path);
  if (text.find("[objective]") != std::string::npos) return parse_config_text(text).task;
  return parse_task_config_text(text);
}

/// --data, else $TEB_DATA_DIR/<task>, else generated in memory from the config.
DatasetBundle resolve_data(const std::string& data_dir, const TaskConfig& task, std::ostream& err) {
  if (!data_dir.empty()) return load_dataset(data_dir);
  const std::string env = env_data_dir();
  if (!env.empty()) {
    const fs::path p = fs::path(env) / to_string(task.kind);
    if (fs::exists(p / "manifest.txt")) return load_dataset(p.string());
  }
  err << "no dataset directory given; generating " << to_string(task.kind) << " in memory\n";
  return generate_dataset(task);
}

struct Common {
  std::string config;
  std::vector<std::string> sets;
};

ExperimentConfig load_experiment(const Common& c, std::vector<std::string>& overrides) {
  ExperimentConfig cfg = parse_config(c.config);
  for (const auto& s : c.sets) {
    apply_override(cfg, s);
    overrides.push_back(s);
  }
  return cfg;
}

void set_override(ExperimentConfig& cfg, std::vector<std::string>& overrides, const std::string& a) {
  apply_override(cfg, a);
  overrides.push_back(a);
}

std::string join_seeds(const std::vector<std::uint64_t>& s) {
  std::string o;
  for (auto v : s) o += (o.empty() ? "" : ",") + std::to_string(v);
  return o;
}

Record metrics_record(const EvalMetrics& m, Split split) {
  Record r{{"type", "eval"},
           {"split", to_string(split)},
           {"n", std::to_string(m.n)},
           {"te_metric_nats", format_double(m.te_metric)},
           {"recon_loglik", format_double(m.recon_loglik)},
           {"loglik_changed", format_double(m.loglik_changed)},
           {"loglik_unchanged", format_double(m.loglik_unchanged)},
           {"n_changed", std::to_string(m.n_changed)}};
  if (m.has_accuracy()) {
    r.emplace_back("task_accuracy", format_double(m.accuracy));
    r.emplace_back("task_accuracy_changed", format_double(m.accuracy_changed));
  }
  if (m.info_yz_given_y == m.info_yz_given_y) r.emplace_back("info_yz_given_y", format_double(m.info_yz_given_y));
  return r;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Transfer entropy bottleneck experiments", "teb"};
  app.require_subcommand(1);

  // generate-data
  auto* gen = app.add_subcommand("generate-data", "Generate a task dataset directory");
  std::string gen_config, gen_out;
  std::vector<std::string> gen_sets;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--config", gen_config, "Config with a [task] section")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", gen_out, "Output directory (default $TEB_DATA_DIR/<task>)");
  gen->add_option("--seed", gen_seed, "Overrides task.seed");
  gen->add_option("--set", gen_sets, "task.key=value override")->take_all();

  // train
  auto* tr = app.add_subcommand("train", "Train one model per configured seed");
  Common tr_c;
  std::string tr_data, tr_out;
  std::optional<std::uint64_t> tr_seed;
  std::optional<int> tr_epochs;
  std::optional<double> tr_beta;
  int tr_max_batches = 0;
  tr->add_option("--config", tr_c.config)->required()->check(CLI::ExistingFile);
  tr->add_option("--data", tr_data, "Dataset directory");
  tr->add_option("--out", tr_out, "Output directory")->required();
  tr->add_option("--seed", tr_seed, "Overrides train.seeds");
  tr->add_option("--epochs", tr_epochs, "Overrides train.epochs");
  tr->add_option("--beta", tr_beta, "Overrides objective.beta");
  tr->add_option("--max-batches", tr_max_batches, "Cap on batches per epoch (0 = all)");
  tr->add_option("--set", tr_c.sets, "section.key=value override")->take_all();

  // sweep
  auto* sw = app.add_subcommand("sweep", "Train across a beta grid and seeds");
  Common sw_c;
  std::string sw_data, sw_out, sw_betas;
  std::optional<int> sw_workers;
  int sw_max_batches = 0;
  sw->add_option("--config", sw_c.config)->required()->check(CLI::ExistingFile);
  sw->add_option("--data", sw_data);
  sw->add_option("--out", sw_out)->required();
  sw->add_option("--betas", sw_betas, "Comma-separated grid; overrides sweep.betas");
  sw->add_option("--workers", sw_workers, "Overrides sweep.workers");
  sw->add_option("--max-batches", sw_max_batches);
  sw->add_option("--set", sw_c.sets)->take_all();

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  std::string ev_ckpt, ev_data, ev_split = "test", ev_log;
  std::optional<std::uint64_t> ev_seed;
  ev->add_option("--checkpoint", ev_ckpt)->required()->check(CLI::ExistingFile);
  ev->add_option("--data", ev_data);
  ev->add_option("--split", ev_split)->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--seed", ev_seed, "Evaluation noise seed (default: the checkpoint's)");
  ev->add_option("--log", ev_log, "Metrics log to append to");

  // oracle
  auto* orc = app.add_subcommand("oracle", "Exact information-theoretic oracles");
  orc->require_subcommand(1);
  auto* orc_te = orc->add_subcommand("te", "Transfer entropy of the switching process");
  int te_classes = 10;
  double te_s = 0.5;
  bool te_verbose = false;
  orc_te->add_option("--classes", te_classes)->check(CLI::Range(2, 1 << 20));
  orc_te->add_option("--switch-prob", te_s)->check(CLI::Range(0.0, 1.0));
  orc_te->add_flag("--verbose", te_verbose, "Also print the explicit-joint value for K <= 6");
  auto* orc_ineq = orc->add_subcommand("check-inequalities", "Random-table inequality suite");
  int iq_n = 1000, iq_card = 4;
  std::uint64_t iq_seed = 0;
  orc_ineq->add_option("--instances", iq_n)->check(CLI::PositiveNumber);
  orc_ineq->add_option("--max-card", iq_card)->check(CLI::Range(2, 8));
  orc_ineq->add_option("--seed", iq_seed);

  // plot
  auto* pl = app.add_subcommand("plot", "Render a metrics log as SVG");
  std::string pl_log, pl_out;
  std::optional<double> pl_true_te;
  pl->add_option("--log", pl_log)->required()->check(CLI::ExistingFile);
  pl->add_option("--out", pl_out)->required();
  pl->add_option("--true-te", pl_true_te, "Reference line on the sweep figure");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (gen->parsed()) {
      TaskConfig task = load_task_config(gen_config);
      ExperimentConfig tmp;
      tmp.task = task;
      for (const auto& s : gen_sets) {
        require(s.rfind("task.", 0) == 0, "generate-data accepts only task.* overrides, got " + s);
        apply_override(tmp, s);
      }
      if (gen_seed) tmp.task.seed = *gen_seed;
      task = tmp.task;
      std::string dir = gen_out;
      if (dir.empty()) {
        const std::string env = env_data_dir();
        require(!env.empty(), "generate-data needs --out or TEB_DATA_DIR");
        dir = (fs::path(env) / to_string(task.kind)).string();
      }
      const DatasetBundle b = generate_dataset(task);
      save_dataset(b, dir);
      out << "wrote " << dir << "\n";
      for (const char* split : {"train", "val", "test"}) {
        out << split << ".crc32=" << file_crc32((fs::path(dir) / (std::string(split) + ".tebt")).string()) << "\n";
      }
      return 0;
    }

    if (tr->parsed()) {
      std::vector<std::string> overrides;
      ExperimentConfig cfg = load_experiment(tr_c, overrides);
      if (tr_seed) set_override(cfg, overrides, "train.seeds=" + std::to_string(*tr_seed));
      if (tr_epochs) set_override(cfg, overrides, "train.epochs=" + std::to_string(*tr_epochs));
      if (tr_beta) set_override(cfg, overrides, "objective.beta=" + format_double(*tr_beta));
      const DatasetBundle data = resolve_data(tr_data, cfg.task, err);
      cfg.task = data.cfg;
      cfg.validate();
      fs::create_directories(tr_out);
      const bool many = cfg.train.seeds.size() > 1;
      for (const auto seed : cfg.train.seeds) {
        const fs::path dir = many ? fs::path(tr_out) / ("seed-" + std::to_string(seed)) : fs::path(tr_out);
        fs::create_directories(dir);
        std::ofstream log(dir / "metrics.log");
        log << log_header(cfg, overrides) << "# seed: " << seed << "\n";
        TrainOptions opts;
        opts.log = &log;
        opts.progress = &out;
        opts.max_batches_per_epoch = tr_max_batches;
        const TrainResult r = train(cfg, data, seed, opts);
        r.checkpoint.save((dir / "checkpoint.tebt").string());
        EvalContext ctx = make_eval_context(data, seed);
        ctx.batch_size = cfg.train.eval_batch_size;
        const EvalMetrics m = evaluate(*r.model, data.test, ctx);
        log << format_record(metrics_record(m, Split::test)) << "\n";
        out << "seed " << seed << " best_epoch " << r.best_epoch << " epoch0_loss " << format_double(r.epoch0_loss)
            << "\n"
            << format_record(metrics_record(m, Split::test)) << "\n";
      }
      return 0;
    }

    if (sw->parsed()) {
      std::vector<std::string> overrides;
      ExperimentConfig cfg = load_experiment(sw_c, overrides);
      if (!sw_betas.empty()) set_override(cfg, overrides, "sweep.betas=" + sw_betas);
      if (sw_workers) set_override(cfg, overrides, "sweep.workers=" + std::to_string(*sw_workers));
      const DatasetBundle data = resolve_data(sw_data, cfg.task, err);
      cfg.task = data.cfg;
      cfg.validate();
      SweepOptions so;
      so.workers = cfg.sweep.workers;
      so.log_dir = sw_out;
      so.progress = &out;
      so.max_batches_per_epoch = sw_max_batches;
      const auto records = beta_sweep(cfg, data, cfg.sweep.betas, cfg.train.seeds, so);
      // Rewrite the merged log with the override header.
      std::ofstream merged(fs::path(sw_out) / "sweep.log");
      merged << log_header(cfg, overrides) << "# seeds: " << join_seeds(cfg.train.seeds) << "\n";
      for (const auto& r : records) merged << format_record(r.to_record()) << "\n";
      for (const auto& a : aggregate_sweep(records)) {
        out << "beta " << format_double(a.beta) << " te " << a.te_mean << " +- " << a.te_std << " loglik "
            << a.loglik_mean << " +- " << a.loglik_std;
        if (a.accuracy_mean == a.accuracy_mean) out << " acc " << a.accuracy_mean;
        out << "\n";
      }
      return 0;
    }

    if (ev->parsed()) {
      const Archive ckpt = Archive::load(ev_ckpt);
      const ExperimentConfig cfg = checkpoint_config(ckpt);
      const DatasetBundle data = resolve_data(ev_data, cfg.task, err);
      const auto model = load_model(ckpt, data);
      const std::uint64_t seed = ev_seed ? *ev_seed : std::stoull(ckpt.attr("seed"));
      EvalContext ctx = make_eval_context(data, seed);
      ctx.batch_size = cfg.train.eval_batch_size;
      const Split split = split_from_string(ev_split);
      const Dataset& d = split == Split::train ? data.train : split == Split::val ? data.val : data.test;
      const std::string line = format_record(metrics_record(evaluate(*model, d, ctx), split));
      out << line << "\n";
      if (!ev_log.empty()) {
        std::ofstream log(ev_log, std::ios::app);
        log << line << "\n";
      }
      return 0;
    }

    if (orc_te->parsed()) {
      const double te = switching_te(te_classes, te_s);
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.5f", te);
      out << buf << "\n";
      if (te_verbose) {
        out << "closed_form=" << format_double(te) << "\n";
        if (te_classes <= 6) {
          const double exact = cond_mutual_info(switching_joint(te_classes, te_s), {"Y'"}, {"X"}, {"Y"});
          out << "explicit_joint=" << format_double(exact) << "\n";
        }
      }
      return 0;
    }

    if (orc_ineq->parsed()) {
      const InequalitySuiteResult r = check_inequalities(iq_n, iq_card, iq_seed);
      out << "instances=" << r.instances << " graph_a_max_gap=" << format_double(r.max_graph_a_gap)
          << " graph_b_max_gap=" << format_double(r.max_graph_b_gap)
          << " equality_max_gap=" << format_double(r.max_equality_gap)
          << " construction_max_error=" << format_double(r.max_construction_error)
          << " violations=" << r.graph_a_violations + r.graph_b_violations + r.equality_violations
          << " pass=" << (r.pass() ? "true" : "false") << "\n";
      return r.pass() ? 0 : 1;
    }

    if (pl->parsed()) {
      const auto sweeps = read_log_records(pl_log, "sweep");
      if (!sweeps.empty()) {
        std::vector<SweepRecord> rs;
        for (const auto& kv : sweeps) rs.push_back(SweepRecord::from_record(kv));
        write_text_file(pl_out, sweep_svg(aggregate_sweep(rs), pl_true_te ? *pl_true_te : EvalMetrics::kNaN));
      } else {
        const auto epochs = read_log_records(pl_log, "epoch");
        require(!epochs.empty(), "metrics log has no sweep or epoch records");
        std::vector<EpochRecord> es;
        for (const auto& kv : epochs) es.push_back(EpochRecord::from_record(kv));
        write_text_file(pl_out, loss_svg(es));
      }
      out << "wrote " << pl_out << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  err << app.help();
  return 2;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace teb
