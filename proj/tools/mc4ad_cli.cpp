// mc4ad command-line driver: dataset generation, training, evaluation,
// two-stage quality control and anomaly-map export.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "mc4ad/mc4ad.hpp"

namespace fs = std::filesystem;
using namespace mc4ad;

namespace {

struct Common {
  std::string config;
  std::string out;
};

RunConfig resolve_config(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (!c.out.empty()) cfg.paths.out = c.out;
  return cfg;
}

fs::path require_out(const RunConfig& cfg) {
  if (cfg.paths.out.empty()) throw ConfigError("--out (or paths.out) is required");
  fs::create_directories(cfg.paths.out);
  return cfg.paths.out;
}

void write_resolved(const fs::path& out, const RunConfig& cfg) {
  write_file_atomic(out / "config.resolved.json", nlohmann::json(cfg).dump(2) + "\n");
}

/// A checkpoint argument is either one file shared by every class or a
/// directory holding `<class>.ckpt`.
class CheckpointSet {
 public:
  explicit CheckpointSet(fs::path path) : path_(std::move(path)) {
    if (!fs::exists(path_)) throw DataError("checkpoint " + path_.string() + " does not exist");
  }

  const Network<float>& net(const std::string& category) {
    const fs::path file = fs::is_directory(path_) ? path_ / (category + ".ckpt") : path_;
    auto it = cache_.find(file.string());
    if (it == cache_.end()) it = cache_.emplace(file.string(), load_checkpoint(file).network<float>()).first;
    return it->second;
  }

 private:
  fs::path path_;
  std::map<std::string, Network<float>> cache_;
};

std::string require(const std::string& value, const char* what) {
  if (value.empty()) throw ConfigError(std::string(what) + " is required");
  return value;
}

int cmd_gen_data(const Common& common, std::optional<std::uint64_t> seed) {
  RunConfig cfg = resolve_config(common);
  if (seed) cfg.synth.seed = *seed;
  cfg.synth.validate();
  const fs::path out = require_out(cfg);
  synthesize_dataset(cfg.synth, out);
  write_resolved(out, cfg);
  std::cout << "wrote dataset to " << out.string() << "\n";
  return 0;
}

struct TrainArgs {
  bool pruned = false;
  std::string resume;
  std::string only_class;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const Common& common, const std::string& data, const TrainArgs& args) {
  RunConfig cfg = resolve_config(common);
  if (!data.empty()) cfg.paths.data = data;
  if (args.pruned) cfg.network.variant = Variant::pruned;
  if (args.epochs) cfg.train.epochs = *args.epochs;
  if (args.seed) cfg.train.seed = *args.seed;
  cfg.validate();
  const fs::path out = require_out(cfg);
  const Dataset ds = load_dataset(require(cfg.paths.data, "--data"));
  write_resolved(out, cfg);

  const double full_count = static_cast<double>(
      Network<float>::build([&] { NetworkConfig c = cfg.network; c.variant = Variant::full; return c; }(), 0)
          .parameter_count());
  bool trained = false;
  for (const auto& cd : ds.classes) {
    if (!args.only_class.empty() && cd.name != args.only_class) continue;
    if (cd.train.empty()) throw DataError("class " + cd.name + " has no training clouds");
    trained = true;
    const fs::path ckpt_path = out / (cd.name + ".ckpt");
    const fs::path log_path = out / (cd.name + "_loss.csv");

    std::optional<Checkpoint> resume;
    if (!args.resume.empty()) {
      const fs::path r = fs::is_directory(args.resume) ? fs::path(args.resume) / (cd.name + ".ckpt") : fs::path(args.resume);
      resume = load_checkpoint(r);
    }
    std::ofstream log;
    if (resume && fs::exists(log_path)) {
      log.open(log_path, std::ios::app);
    } else {
      log.open(log_path);
      log << epoch_log_csv_header() << "\n";
    }
    TrainHooks hooks;
    hooks.on_epoch = [&](const EpochLog& e) {
      log << to_csv_row(e) << "\n";
      log.flush();
    };
    hooks.on_checkpoint = [&](const TrainState& s) { save_checkpoint(ckpt_path, s.checkpoint(cfg.train)); };
    const auto t0 = std::chrono::steady_clock::now();
    const TrainState st =
        train(cd.train, cfg.network, cfg.dagen, cfg.loss, cfg.train, resume ? &*resume : nullptr, hooks);
    save_checkpoint(ckpt_path, st.checkpoint(cfg.train));

    const double count = static_cast<double>(st.net.parameter_count());
    const nlohmann::json info{{"class", cd.name},
                              {"variant", to_string(cfg.network.variant)},
                              {"parameter_count", st.net.parameter_count()},
                              {"full_parameter_count", full_count},
                              {"ratio_to_full", count / full_count},
                              {"steps", st.step},
                              {"lr_initial", cfg.train.initial_lr(cfg.network.variant)},
                              {"train_seconds",
                               std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}};
    write_file_atomic(out / (cd.name + "_model.json"), info.dump(2) + "\n");
    std::cout << cd.name << ": " << st.step << " steps";
    if (!st.log.empty()) std::cout << ", final L_comb " << st.log.back().comb;
    std::cout << "\n";
  }
  if (!trained) throw DataError("no class matched --class " + args.only_class);
  return 0;
}

std::vector<TestSample> all_test_samples(const Dataset& ds) {
  std::vector<TestSample> out;
  for (const auto& cd : ds.classes) out.insert(out.end(), cd.test.begin(), cd.test.end());
  if (out.empty()) throw DataError("dataset has no test samples");
  return out;
}

int cmd_evaluate(const Common& common, const std::string& data, const std::string& checkpoint, bool oracle,
                 const std::string& pooling) {
  RunConfig cfg = resolve_config(common);
  if (!data.empty()) cfg.paths.data = data;
  if (!checkpoint.empty()) cfg.paths.checkpoint = checkpoint;
  const fs::path out = require_out(cfg);
  const Dataset ds = load_dataset(require(cfg.paths.data, "--data"));
  const auto samples = all_test_samples(ds);
  write_resolved(out, cfg);

  EvalOptions options;
  if (pooling == "per_sample") options.pooling = PointPooling::per_sample;
  else if (pooling != "per_category") throw ConfigError("--pooling must be per_category or per_sample");

  EvalResult result;
  if (oracle) {
    // Debug scorer: the ground-truth mask carried by each loaded test cloud.
    result = evaluate(samples, [](const std::string&) -> Scorer {
      return [](const PointCloud& c) {
        ScoreResult r;
        for (auto m : c.point_labels.value()) r.point_scores.push_back(m);
        r.object_score = *std::max_element(r.point_scores.begin(), r.point_scores.end());
        return r;
      };
    }, options);
  } else {
    CheckpointSet ckpts(require(cfg.paths.checkpoint, "--checkpoint"));
    result = evaluate(samples, [&](const std::string& category) -> Scorer {
      const Network<float>* net = &ckpts.net(category);
      return [net](const PointCloud& c) { return score(*net, c); };
    }, options);
  }
  const std::string csv = eval_csv(result);
  write_file_atomic(out / "metrics.csv", csv);
  std::cout << csv;
  for (const auto& c : result.categories) {
    for (const auto& note : c.notes) std::cerr << c.category << ": " << note << "\n";
  }
  return 0;
}

int cmd_hqc(const Common& common, const std::string& data, const std::string& pruned_ckpt,
            const std::string& full_ckpt, std::optional<double> b) {
  RunConfig cfg = resolve_config(common);
  if (!data.empty()) cfg.paths.data = data;
  if (b) cfg.hqc.b = *b;
  cfg.hqc.validate();
  const fs::path out = require_out(cfg);
  const Dataset ds = load_dataset(require(cfg.paths.data, "--data"));
  CheckpointSet pruned(require(pruned_ckpt, "--pruned-ckpt"));
  CheckpointSet full(require(full_ckpt, "--full-ckpt"));
  write_resolved(out, cfg);

  nlohmann::json summary = nlohmann::json::array();
  for (const auto& cd : ds.classes) {
    if (cd.test.empty()) continue;
    std::vector<PointCloud> clouds;
    std::string names = "sample_id,name\n";
    for (std::size_t i = 0; i < cd.test.size(); ++i) {
      clouds.push_back(cd.test[i].cloud);
      names += std::to_string(i) + "," + cd.test[i].name + "\n";
    }
    const Network<float>* vp = &pruned.net(cd.name);
    const Network<float>* vo = &full.net(cd.name);
    const HqcReport report = hqc_run(
        clouds, [vp](const PointCloud& c) { return score(*vp, c); }, [vo](const PointCloud& c) { return score(*vo, c); },
        cfg.hqc);
    const fs::path dir = out / cd.name;
    write_file_atomic(dir / "hqc.csv", hqc_csv(report));
    write_file_atomic(dir / "samples.csv", names);
    nlohmann::json s = hqc_summary(report);
    s["category"] = cd.name;
    write_file_atomic(dir / "summary.json", s.dump(2) + "\n");
    for (const auto& w : report.warnings) std::cerr << cd.name << ": " << w << "\n";
    summary.push_back(s);
  }
  write_file_atomic(out / "summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_export_map(const Common& common, const std::string& checkpoint, const std::string& cloud_path) {
  RunConfig cfg = resolve_config(common);
  if (!checkpoint.empty()) cfg.paths.checkpoint = checkpoint;
  const fs::path out = require_out(cfg);
  const PointCloud cloud = load_cloud(require(cloud_path, "--cloud"));
  const auto net = load_checkpoint(require(cfg.paths.checkpoint, "--checkpoint")).network<float>();
  write_resolved(out, cfg);
  const ScoreResult r = score(net, normalize_cloud(cloud));
  const std::string stem = fs::path(cloud_path).stem().string();
  write_file_atomic(out / (stem + "_map.ply"), heat_map_ply(cloud, r.point_scores));
  std::ostringstream os;
  os.precision(9);
  for (double s : r.point_scores) os << s << "\n";
  write_file_atomic(out / (stem + "_scores.txt"), os.str());
  std::cout << stem << ": object score " << r.object_score << "\n";
  return 0;
}

int cmd_make_anomalies(const Common& common, const std::string& cloud_path, std::optional<std::uint64_t> seed) {
  RunConfig cfg = resolve_config(common);
  if (seed) cfg.dagen.rng_seed = *seed;
  cfg.dagen.validate();
  const fs::path out = require_out(cfg);
  const PointCloud cloud = normalize_cloud(load_cloud(require(cloud_path, "--cloud")));
  write_resolved(out, cfg);
  const PseudoAnomalySample s = generate(cloud, cfg.dagen);
  const std::string stem = fs::path(cloud_path).stem().string();
  save_cloud(out / (stem + "_perturbed.ply"), s.perturbed);
  save_field(out / (stem + "_displacement.txt"), s.displacement);
  save_mask(out / (stem + "_mask.txt"), s.mask);
  std::cout << stem << ": " << std::count(s.mask.begin(), s.mask.end(), std::uint8_t{1}) << " points displaced\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mc4ad: corrective-force 3D anomaly detection"};
  app.require_subcommand(1);

  Common common;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "JSON run configuration");
    sub->add_option("--out", common.out, "output directory");
  };

  std::optional<std::uint64_t> seed;
  std::string data;
  std::string checkpoint;
  std::string cloud;

  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset tree");
  add_common(gen);
  gen->add_option("--seed", seed, "dataset seed");

  TrainArgs targs;
  auto* tr = app.add_subcommand("train", "train one model per class");
  add_common(tr);
  tr->add_option("--data", data, "dataset root");
  tr->add_flag("--pruned", targs.pruned, "train the pruned variant");
  tr->add_option("--resume", targs.resume, "checkpoint file or directory to resume from");
  tr->add_option("--class", targs.only_class, "train only this class");
  tr->add_option("--epochs", targs.epochs, "override train.epochs");
  tr->add_option("--seed", targs.seed, "override train.seed");

  bool oracle = false;
  std::string pooling = "per_category";
  auto* ev = app.add_subcommand("evaluate", "score the test split and report metrics");
  add_common(ev);
  ev->add_option("--data", data, "dataset root");
  ev->add_option("--checkpoint", checkpoint, "checkpoint file or directory of <class>.ckpt");
  ev->add_flag("--oracle-scorer", oracle, "debug: score with the ground truth");
  ev->add_option("--pooling", pooling, "point-level pooling: per_category or per_sample");

  std::string pruned_ckpt;
  std::string full_ckpt;
  std::optional<double> b;
  auto* hq = app.add_subcommand("hqc", "two-stage quality control");
  add_common(hq);
  hq->add_option("--data", data, "dataset root");
  hq->add_option("--pruned-ckpt", pruned_ckpt, "pruned checkpoint file or directory");
  hq->add_option("--full-ckpt", full_ckpt, "full checkpoint file or directory");
  hq->add_option("--b", b, "bypass fraction");

  auto* ex = app.add_subcommand("export-map", "write a colored anomaly map");
  add_common(ex);
  ex->add_option("--checkpoint", checkpoint, "checkpoint file");
  ex->add_option("--cloud", cloud, "input cloud (.ply or .xyz)");

  auto* mk = app.add_subcommand("make-anomalies", "apply pseudo-anomaly generation to one cloud");
  add_common(mk);
  mk->add_option("--cloud", cloud, "input cloud (.ply or .xyz)");
  mk->add_option("--seed", seed, "generation seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen_data(common, seed);
    if (*tr) return cmd_train(common, data, targs);
    if (*ev) return cmd_evaluate(common, data, checkpoint, oracle, pooling);
    if (*hq) return cmd_hqc(common, data, pruned_ckpt, full_ckpt, b);
    if (*ex) return cmd_export_map(common, checkpoint, cloud);
    if (*mk) return cmd_make_anomalies(common, cloud, seed);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
