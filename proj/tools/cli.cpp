#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>

#include "sstsne/activelearn.hpp"
#include "sstsne/checkpoint.hpp"
#include "sstsne/config_io.hpp"
#include "sstsne/dataset.hpp"
#include "sstsne/emulator.hpp"
#include "sstsne/engine.hpp"
#include "sstsne/metrics.hpp"
#include "sstsne/server.hpp"
#include "sstsne/service.hpp"

namespace sstsne::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

struct EngineFlags {
  std::optional<int> dims;
  std::optional<double> perplexity;
  std::optional<double> theta;
  std::optional<double> theta_k;
  std::optional<double> f;
  std::optional<double> r;
  std::optional<int> s;
  std::optional<int> ramp;
  std::optional<int> e_max;
  std::optional<double> eta;
  std::optional<std::string> init;

  void add(CLI::App& app) {
    app.add_option("--dims", dims, "Output dimensions (2 or 3)");
    app.add_option("--perplexity", perplexity, "Perplexity");
    app.add_option("--theta", theta, "Barnes-Hut threshold for forces");
    app.add_option("--theta-k", theta_k, "Barnes-Hut threshold for focus neighbourhoods");
    app.add_option("--f", f, "Labeling importance");
    app.add_option("--r", r, "Repulsion emphasis");
    app.add_option("--start-epoch", s, "Epoch at which labels start to act");
    app.add_option("--ramp", ramp, "Point learning rate ramp in epochs (0 = immediate)");
    app.add_option("--epochs", e_max, "Stopping epoch");
    app.add_option("--eta", eta, "Gradient step size");
    app.add_option("--init", init, "pca or random")->check(CLI::IsMember({"pca", "random"}));
  }

  void apply(TsneConfig& c) const {
    if (dims) c.out_dims = *dims;
    if (perplexity) c.perplexity = *perplexity;
    if (theta) c.theta = *theta;
    if (theta_k) c.theta_k = *theta_k;
    if (f) c.f = *f;
    if (r) c.r = *r;
    if (s) c.s = *s;
    if (ramp) c.ramp_epochs = *ramp;
    if (e_max) c.e_max = *e_max;
    if (eta) c.eta = *eta;
    if (init) c.init_mode = *init == "pca" ? InitMode::pca : InitMode::random;
  }
};

struct Common {
  std::string out_dir = "out";
  std::string config_file;
  std::optional<std::uint64_t> seed;

  void add(CLI::App& app) {
    app.add_option("--out", out_dir, "Output directory")->capture_default_str();
    app.add_option("--config", config_file, "Flat JSON config file (flags take precedence)");
    app.add_option("--seed", seed, "Random seed");
  }

  json load_config() const {
    if (config_file.empty()) return json::object();
    std::ifstream in(config_file);
    if (!in) throw DataError("cannot open config file " + config_file);
    try {
      return json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config file is not valid JSON: ") + e.what());
    }
  }

  fs::path prepare_out() const {
    fs::create_directories(out_dir);
    return fs::path(out_dir);
  }
};

void write_manifest(const fs::path& dir, const std::string& command, const std::vector<std::string>& args,
                    const json& config, std::uint64_t seed, const json& extra = json::object()) {
  json manifest{{"command", command},
                {"args", args},
                {"config", config},
                {"seed", seed},
                {"versions",
                 {{"sstsne", kVersion},
                  {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                std::to_string(EIGEN_MINOR_VERSION)},
                  {"compiler", __VERSION__}}}};
  for (auto it = extra.begin(); it != extra.end(); ++it) manifest[it.key()] = it.value();
  std::ofstream out(dir / "manifest.json");
  out << std::setw(2) << manifest << '\n';
}

Dataset load_dataset(const std::string& features, const std::string& labels) {
  Dataset ds = load_features(features);
  if (!labels.empty()) {
    auto table = load_labels(labels, ds.size());
    ds.labels = std::move(table.ids);
    ds.class_names = std::move(table.names);
  }
  ds.validate();
  return ds;
}

void write_positions(const fs::path& path, const Matrix& y) { write_features(path, y); }

TsneConfig resolve_engine(const json& file, const EngineFlags& flags, const Common& common) {
  TsneConfig cfg;
  update_from_json(cfg, file);
  flags.apply(cfg);
  if (common.seed) cfg.seed = *common.seed;
  cfg.validate();
  return cfg;
}

std::string fmt_actions(double v) {
  if (std::isinf(v)) return "inf";
  std::ostringstream s;
  s << v;
  return s.str();
}

std::atomic<service::Server*> g_server{nullptr};

extern "C" void handle_signal(int) {
  if (auto* s = g_server.load()) {
    std::thread([s] { s->stop(); }).detach();
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Semi-supervised Barnes-Hut t-SNE labeling engine"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate Gaussian class clusters");
  Common synth_common;
  synth_common.add(*synth);
  int synth_classes = 5;
  Index synth_per_class = 200;
  Index synth_dim = 32;
  double synth_sep = 10.0, synth_noise = 1.0;
  synth->add_option("--classes", synth_classes)->capture_default_str();
  synth->add_option("--per-class", synth_per_class)->capture_default_str();
  synth->add_option("--dim", synth_dim)->capture_default_str();
  synth->add_option("--separation", synth_sep)->capture_default_str();
  synth->add_option("--noise", synth_noise)->capture_default_str();

  // embed
  auto* embed = app.add_subcommand("embed", "Optimize an embedding to the stopping epoch");
  Common embed_common;
  EngineFlags embed_flags;
  std::string embed_features, embed_labels;
  embed_common.add(*embed);
  embed_flags.add(*embed);
  embed->add_option("--features", embed_features, "features.tsv")->required();
  embed->add_option("--labels", embed_labels, "labels.tsv; applied as annotations from epoch 0");

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Emulated group labeling session");
  Common sim_common;
  EngineFlags sim_flags;
  std::string sim_features, sim_labels;
  int sim_stride = 50;
  sim_common.add(*simulate);
  sim_flags.add(*simulate);
  simulate->add_option("--features", sim_features)->required();
  simulate->add_option("--labels", sim_labels)->required();
  simulate->add_option("--stride", sim_stride, "Epoch stride for kNN snapshots")->capture_default_str();

  // active
  auto* active = app.add_subcommand("active", "Active learning comparison");
  Common al_common;
  EngineFlags al_flags;
  std::string al_features, al_labels, al_strategy = "all";
  int al_folds = 5;
  std::optional<Index> al_budget, al_batch, al_max_n;
  std::optional<int> al_jobs, al_rounds, al_ref_epochs;
  al_common.add(*active);
  al_flags.add(*active);
  active->add_option("--features", al_features)->required();
  active->add_option("--labels", al_labels)->required();
  active->add_option("--strategy", al_strategy, "random|uncertainty|margin|entropy|tsne|all")->capture_default_str();
  active->add_option("--folds", al_folds)->capture_default_str();
  active->add_option("--budget", al_budget, "Action budget per fold");
  active->add_option("--batch", al_batch, "Samples per round");
  active->add_option("--epochs-per-round", al_rounds, "Classifier epochs per retraining");
  active->add_option("--reference-epochs", al_ref_epochs, "Epochs for the full-label reference");
  active->add_option("--max-n", al_max_n, "Stratified subsample cap");
  active->add_option("--jobs", al_jobs, "Folds run in parallel");

  // knn-table
  auto* table = app.add_subcommand("knn-table", "4-NN embedding accuracy table");
  Common table_common;
  EngineFlags table_flags;
  std::vector<std::string> table_entries;
  Index table_max_n = 3000;
  table_common.add(*table);
  table_flags.add(*table);
  table->add_option("--entry", table_entries, "FEATURESET,DATASET,features.tsv,labels.tsv")->required();
  table->add_option("--max-n", table_max_n)->capture_default_str();

  // serve
  auto* serve = app.add_subcommand("serve", "Run the labeling server");
  std::string serve_data, serve_address = "127.0.0.1";
  int serve_port = 8080;
  double serve_throttle = 60.0;
  int serve_threads = 2;
  serve->add_option("--data", serve_data, "Directory of datasets")->required();
  serve->add_option("--port", serve_port)->capture_default_str();
  serve->add_option("--address", serve_address)->capture_default_str();
  serve->add_option("--throttle", serve_throttle, "Max epochs per second per session")->capture_default_str();
  serve->add_option("--threads", serve_threads)->capture_default_str();

  std::vector<std::string> argv_copy = args;
  std::vector<char*> argv;
  for (auto& a : argv_copy) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (synth->parsed()) {
      const std::uint64_t seed = synth_common.seed.value_or(0);
      const Dataset ds = make_synthetic_gaussians(synth_classes, synth_per_class, synth_dim, synth_sep, synth_noise, seed);
      const fs::path dir = synth_common.prepare_out();
      write_features(dir / "features.tsv", ds.features);
      write_labels(dir / "labels.tsv", ds);
      write_manifest(dir, "synth", args,
                     {{"classes", synth_classes}, {"per_class", synth_per_class}, {"dim", synth_dim},
                      {"separation", synth_sep}, {"noise", synth_noise}},
                     seed);
      out << "wrote " << ds.size() << " samples to " << dir.string() << '\n';
      return kOk;
    }

    if (embed->parsed()) {
      const TsneConfig cfg = resolve_engine(embed_common.load_config(), embed_flags, embed_common);
      const Dataset ds = load_dataset(embed_features, embed_labels);
      Engine engine(ds.features, cfg);
      if (!engine.init_warning().empty()) err << "warning: " << engine.init_warning() << '\n';
      if (ds.has_labels())
        for (Index i = 0; i < ds.size(); ++i) engine.apply_label(i, ds.labels[static_cast<std::size_t>(i)]);
      engine.run_until(cfg.e_max);
      const fs::path dir = embed_common.prepare_out();
      write_positions(dir / "positions.tsv", engine.state().y);
      save_checkpoint(dir / "checkpoint.bin", engine.state(), engine.annotations());
      const double kl = engine.kl();
      write_manifest(dir, "embed", args, to_json(cfg), cfg.seed, {{"kl_divergence", kl}});
      out << "epoch " << engine.state().epoch << " KL " << kl << '\n';
      return kOk;
    }

    if (simulate->parsed()) {
      const TsneConfig cfg = resolve_engine(sim_common.load_config(), sim_flags, sim_common);
      const Dataset ds = load_dataset(sim_features, sim_labels);
      Engine engine(ds.features, cfg);
      SnapshotRecorder recorder(sim_stride);
      SessionOptions options;
      options.on_epoch = [&](const Engine& e) { recorder(e); };
      const ActionLog log = run_session(engine, ds.labels, options);
      // Keep sampling to e_max so the kNN curve covers the full run.
      while (!engine.finished()) {
        engine.step();
        recorder(engine);
      }

      const fs::path dir = sim_common.prepare_out();
      {
        std::ofstream f(dir / "action_log.csv");
        log.write_csv(f);
      }
      {
        std::ofstream f(dir / "knn_over_epochs.csv");
        f << "epoch,knn_accuracy\n";
        for (const auto& [epoch, acc] : knn_over_epochs(recorder.snapshots(), ds.labels)) f << epoch << ',' << acc << '\n';
      }
      write_positions(dir / "positions.tsv", engine.state().y);
      write_manifest(dir, "simulate", args, to_json(cfg), cfg.seed,
                     {{"events", log.events().size()},
                      {"cumulative_labels", log.cumulative_labels()},
                      {"cumulative_actions", log.cumulative_actions()}});
      out << log.events().size() << " events, " << log.cumulative_labels() << " labels, " << log.cumulative_actions()
          << " actions\n";
      return kOk;
    }

    if (active->parsed()) {
      const json file = al_common.load_config();
      TsneConfig tcfg = resolve_engine(file, al_flags, al_common);
      if (!file.contains("f") && !al_flags.f) tcfg.f = 0.1;
      if (!file.contains("ramp_epochs") && !al_flags.ramp) tcfg.ramp_epochs = 10;
      if (!file.contains("r") && !al_flags.r) tcfg.r = 0.1;
      ALConfig acfg;
      update_from_json(acfg, file);
      if (al_budget) acfg.budget = *al_budget;
      if (al_batch) acfg.batch = *al_batch;
      if (al_rounds) acfg.epochs_per_round = *al_rounds;
      if (al_ref_epochs) acfg.reference_epochs = *al_ref_epochs;
      if (al_jobs) acfg.jobs = *al_jobs;
      if (al_common.seed) acfg.seed = *al_common.seed;

      std::vector<Strategy> strategies;
      if (al_strategy == "all")
        strategies = {Strategy::random, Strategy::uncertainty, Strategy::margin, Strategy::entropy, Strategy::tsne};
      else
        strategies = {parse_strategy(al_strategy)};

      Dataset ds = load_dataset(al_features, al_labels);
      if (!ds.has_labels()) throw DataError("active learning needs labels");
      if (al_max_n) ds = stratified_subsample(ds, *al_max_n, acfg.seed);
      const auto folds = kfold_split(ds.size(), al_folds, acfg.seed);

      std::vector<double> reference;
      for (const auto& fold : folds) reference.push_back(reference_accuracy(ds, fold, acfg));

      const fs::path dir = al_common.prepare_out();
      std::ofstream curves_csv(dir / "curves.csv");
      std::ofstream summary_csv(dir / "summary.csv");
      curves_csv << "strategy,fold,actions,accuracy\n";
      summary_csv << "strategy,mean_actions_to_80,folds_reached,mean_reference_accuracy\n";
      double ref_mean = 0.0;
      for (double r : reference) ref_mean += r / static_cast<double>(reference.size());

      json summary = json::object();
      for (Strategy s : strategies) {
        const auto curves = s == Strategy::tsne ? run_tsne_strategy(ds, folds, tcfg, acfg)
                                                : run_active_learning(ds, folds, s, acfg);
        write_curves_csv(curves_csv, curves, false);
        double sum = 0.0;
        int reached = 0;
        for (std::size_t f = 0; f < curves.size(); ++f) {
          const double a = actions_to_fraction(curves[f], reference[f], 0.8);
          sum += a;
          if (!std::isinf(a)) ++reached;
        }
        const double mean = sum / static_cast<double>(curves.size());
        summary_csv << to_string(s) << ',' << fmt_actions(mean) << ',' << reached << ',' << ref_mean << '\n';
        summary[to_string(s)] = fmt_actions(mean);
        out << std::left << std::setw(12) << to_string(s) << " actions to 80%: " << fmt_actions(mean) << '\n';
      }
      json cfg = to_json(acfg);
      cfg["tsne"] = to_json(tcfg);
      cfg["folds"] = al_folds;
      cfg["strategy"] = al_strategy;
      write_manifest(dir, "active", args, cfg, acfg.seed, {{"summary", summary}, {"reference_accuracy", reference}});
      return kOk;
    }

    if (table->parsed()) {
      const TsneConfig cfg = resolve_engine(table_common.load_config(), table_flags, table_common);
      std::vector<KnnTableCell> cells;
      for (const auto& entry : table_entries) {
        std::vector<std::string> parts;
        std::stringstream ss(entry);
        for (std::string p; std::getline(ss, p, ',');) parts.push_back(p);
        if (parts.size() != 4) throw ConfigError("--entry expects FEATURESET,DATASET,features.tsv,labels.tsv");
        Dataset ds = load_dataset(parts[2], parts[3]);
        ds = stratified_subsample(ds, table_max_n, cfg.seed);
        Engine engine(ds.features, cfg);
        engine.run_until(cfg.e_max);
        const auto folds = kfold_split(ds.size(), 5, cfg.seed);
        cells.push_back({parts[0], parts[1], knn_accuracy_folds(engine.state().y, ds.labels, folds, 4)});
        out << parts[0] << " / " << parts[1] << ": " << 100.0 * cells.back().report.mean << "% ± "
            << 100.0 * cells.back().report.std << '\n';
      }
      const fs::path dir = table_common.prepare_out();
      std::ofstream f(dir / "knn_table.csv");
      write_knn_table(f, cells);
      write_manifest(dir, "knn-table", args, to_json(cfg), cfg.seed);
      return kOk;
    }

    if (serve->parsed()) {
      service::ServiceCore core;
      core.default_throttle = serve_throttle;
      const auto names = core.register_directory(serve_data);
      service::Server server(core, serve_address, static_cast<unsigned short>(serve_port), serve_threads);
      try {
        server.start();
      } catch (const std::system_error& e) {
        err << "error: cannot listen on " << serve_address << ':' << serve_port << ": " << e.what() << '\n';
        return kUsage;
      }
      out << "serving " << names.size() << " dataset(s) on http://" << serve_address << ':' << server.port() << std::endl;
      g_server = &server;
      std::signal(SIGINT, handle_signal);
      std::signal(SIGTERM, handle_signal);
      server.wait();
      g_server = nullptr;
      return kOk;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << '\n';
    return kNumericalFailure;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsage;
}

}  // namespace sstsne::cli
