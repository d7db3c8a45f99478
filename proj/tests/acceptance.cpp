// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "mc4ad/mc4ad.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace mc4ad;
namespace t = mc4ad::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const Outcome& o) {
  std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << "  " << name << "  " << o.detail << std::endl;
  if (!o.pass) ++failures;
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

Matrix<double> random_field(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix<double> m(n, 3);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

// Terms of the resultant F_E + F_I pass the same gradient to both heads.
double through_resultant(LossGrad<double>* g, const std::function<double(Matrix<double>*)>& term) {
  if (!g) return term(nullptr);
  Matrix<double> r;
  const double v = term(&r);
  g->external = r;
  g->internal = r;
  return v;
}

Outcome loss_gradients() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  const LossConfig cfg;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Matrix<double> ext = random_field(16, rng);
    Matrix<double> inn = random_field(16, rng);
    const Matrix<double> target = random_field(16, rng);
    const auto pred = [&] { return make_prediction<double>(ext, inn); };
    const std::vector<std::pair<const char*, std::function<double(LossGrad<double>*)>>> terms = {
        {"sym", [&](LossGrad<double>* g) { return sym_loss<double>(pred(), cfg.epsilon, g); }},
        {"dist",
         [&](LossGrad<double>* g) {
           return through_resultant(g, [&](Matrix<double>* r) { return dist_loss<double>(pred().resultant, target, r); });
         }},
        {"dir",
         [&](LossGrad<double>* g) {
           return through_resultant(
               g, [&](Matrix<double>* r) { return dir_loss<double>(pred().resultant, target, cfg.epsilon, r); });
         }},
        {"comb", [&](LossGrad<double>* g) { return combined_loss<double>(pred(), target, cfg, g).total; }},
    };
    for (const auto& [name, f] : terms) {
      LossGrad<double> g;
      f(&g);
      const auto value = [&] { return f(nullptr); };
      for (Eigen::Index k = 0; k < ext.size(); ++k) {
        worst = std::max(worst, t::relative_error(g.external.data()[k], t::central_difference(value, ext.data() + k, 1e-6)));
        worst = std::max(worst, t::relative_error(g.internal.data()[k], t::central_difference(value, inn.data() + k, 1e-6)));
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 10.0, "max rel err " + fmt(worst) + ", " + fmt(secs, 3) + " s"};
}

Outcome network_gradients() {
  const auto t0 = Clock::now();
  NetworkConfig c;
  c.base_channels = 8;
  c.voxel_size = 0.25;
  // Independent heads keep the symmetry term away from its |I - E| kink.
  c.head_init = HeadInit::independent;
  auto net = Network<double>::build(c, 202);
  std::mt19937_64 rng(203);
  const PointCloud cloud = estimate_normals(normalize_cloud(PointCloud(t::random_points(64, rng)))).cloud;
  DaGenParams da;
  da.patch_count = 8;
  da.perturb_fraction = 0.25;
  da.rng_seed = 204;
  const auto sample = generate(cloud, da);
  const LossConfig lc;
  const Matrix<double> target = supervision_target<double>(sample.displacement, lc);
  const auto prep = net.prepare(sample.perturbed);

  net.zero_grad();
  Tape<double> tape;
  LossGrad<double> lg;
  combined_loss<double>(net.forward(prep, &tape), target, lc, &lg);
  net.backward(tape, lg.external, lg.internal);
  const auto objective = [&] { return combined_loss<double>(net.forward(prep), target, lc).total; };

  std::vector<std::pair<std::size_t, Eigen::Index>> slots;
  for (std::size_t p = 0; p < net.params().size(); ++p) {
    for (Eigen::Index k = 0; k < net.params()[p].value.size(); ++k) slots.emplace_back(p, k);
  }
  std::shuffle(slots.begin(), slots.end(), rng);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    auto& param = net.params()[slots[static_cast<std::size_t>(i)].first];
    const Eigen::Index k = slots[static_cast<std::size_t>(i)].second;
    const double numeric = t::central_difference(objective, param.value.data() + k, 1e-6);
    worst = std::max(worst, t::relative_error(param.grad.data()[k], numeric, 1e-6));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-3 && secs < 60.0, "max rel err " + fmt(worst) + " over 20 parameters, " + fmt(secs, 3) + " s"};
}

Outcome dagen_invariants() {
  const auto t0 = Clock::now();
  std::mt19937_64 meta(303);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t violations = 0;
  double max_norm = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 64 + static_cast<std::size_t>(u(meta) * 448);
    std::mt19937_64 rng(meta());
    PointCloud cloud = normalize_cloud(PointCloud(t::random_points(n, rng)));
    if (trial % 2 == 0) cloud = estimate_normals(cloud).cloud;
    DaGenParams p;
    p.patch_count = 4 + static_cast<int>(u(meta) * 28);
    p.perturb_fraction = 0.05 + 0.95 * u(meta);
    p.gamma = {0.02 + 0.05 * u(meta), 0.08 + 0.1 * u(meta)};
    p.rng_seed = meta();
    const auto s = generate(cloud, p);
    const auto again = generate(cloud, p);
    if (!(again.perturbed.points.array() == s.perturbed.points.array()).all() || again.mask != s.mask ||
        !(again.displacement.array() == s.displacement.array()).all()) {
      ++violations;
    }
    std::vector<double> gamma_sum(n, 0.0);
    std::vector<bool> in_patch(n, false);
    for (const auto& pp : s.perturbations) {
      for (int m : pp.patch.members) {
        gamma_sum[static_cast<std::size_t>(m)] += pp.gamma;
        in_patch[static_cast<std::size_t>(m)] = true;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      const double norm = s.displacement.row(r).norm();
      max_norm = std::max(max_norm, norm);
      bool ok = norm <= gamma_sum[i] + 1e-15;
      ok = ok && s.mask[i] == (norm > 0.0 ? 1 : 0);
      if (!in_patch[i]) ok = ok && norm == 0.0;
      if (!s.mask[i]) {
        ok = ok && (s.perturbed.points.row(r).array() == cloud.points.row(r).array()).all();
      } else {
        ok = ok && (s.perturbed.points.row(r).array() == (cloud.points.row(r) + s.displacement.row(r)).array()).all();
      }
      if (!ok) ++violations;
    }
  }
  const double secs = seconds_since(t0);
  return {violations == 0 && secs < 30.0,
          std::to_string(violations) + " violations in 1000 generations, max |F_D| " + fmt(max_norm) + ", " +
              fmt(secs, 3) + " s"};
}

// The L1 numerator makes the opposed and one-sided values exact only for
// axis-aligned forces, so those two cases draw a random axis, sign and length.
Outcome symmetry_fixed_points() {
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> length(0.1, 10.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix<double> e = random_field(1, rng);
    Matrix<double> axis = Matrix<double>::Zero(1, 3);
    axis(0, static_cast<Eigen::Index>(rng() % 3)) = rng() % 2 ? 1.0 : -1.0;
    const Matrix<double> scaled = length(rng) * axis;
    const Matrix<double> zero = Matrix<double>::Zero(1, 3);
    worst = std::max(worst, std::abs(sym_loss(make_prediction<double>(e, e), 1e-8) + 1.0));
    worst = std::max(worst, std::abs(sym_loss(make_prediction<double>(axis, Matrix<double>(-axis)), 1e-8) - 2.0));
    worst = std::max(worst, std::abs(sym_loss(make_prediction<double>(scaled, zero), 1e-8) - 1.0));
    worst = std::max(worst, std::abs(sym_loss(make_prediction<double>(zero, scaled), 1e-8) - 1.0));
  }
  return {worst <= 1e-6, "max deviation " + fmt(worst)};
}

Outcome metric_oracles() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(505);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng() % 63;
    std::vector<double> scores(n);
    Labels labels(n);
    std::uniform_int_distribution<int> level(0, 7);  // coarse levels force ties
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = trial % 2 ? level(rng) / 7.0 : std::uniform_real_distribution<double>(0, 1)(rng);
      labels[i] = static_cast<std::uint8_t>(rng() % 2);
    }
    labels[0] = 0;
    labels[1] = 1;
    worst = std::max(worst, std::abs(auroc(scores, labels) - t::auroc_pairs(scores, labels)));
    worst = std::max(worst, std::abs(aupr(scores, labels) - t::aupr_sweep(scores, labels)));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-9 && secs < 10.0, "max deviation " + fmt(worst) + ", " + fmt(secs, 3) + " s"};
}

Outcome pruning_ratio() {
  NetworkConfig full;
  NetworkConfig pruned;
  pruned.variant = Variant::pruned;
  const double a = static_cast<double>(Network<float>::build(full, 0).parameter_count());
  const double b = static_cast<double>(Network<float>::build(pruned, 0).parameter_count());
  const double r = b / a;
  return {r >= 0.25 && r <= 0.45, "pruned/full = " + fmt(b, 8) + "/" + fmt(a, 8) + " = " + fmt(r)};
}

Outcome gate_behaviour() {
  NetworkConfig c;
  c.base_channels = 8;
  c.voxel_size = 0.1;
  std::size_t outside = 0;
  std::size_t mismatched = 0;
  double lo = 1.0;
  double hi = 0.0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    const auto net = Network<double>::build(c, 600 + trial);
    std::mt19937_64 rng(700 + trial);
    const auto prep = net.prepare(normalize_cloud(PointCloud(t::random_points(256, rng))));
    Tape<double> tape;
    net.forward(prep, &tape);
    for (const auto& b : tape.blocks) {
      lo = std::min(lo, b.alpha.minCoeff());
      hi = std::max(hi, b.alpha.maxCoeff());
      outside += static_cast<std::size_t>(((b.alpha.array() <= 0.0) || (b.alpha.array() >= 1.0)).count());
    }
    if (trial % 10 != 0) continue;
    for (double a : {0.0, 1.0}) {
      Tape<double> forced;
      ForwardOptions<double> opts;
      opts.gate_override = a;
      net.forward(prep, &forced, opts);
      for (const auto& b : forced.blocks) {
        if (b.fused != (a == 1.0 ? b.proj_decoder : b.proj_skip)) ++mismatched;
      }
    }
  }
  return {outside == 0 && mismatched == 0,
          "alpha range (" + fmt(lo) + ", " + fmt(hi) + "), " + std::to_string(outside) + " outside, " +
              std::to_string(mismatched) + " injection mismatches"};
}

struct TrainedModels {
  std::map<std::string, Network<float>> full;
  std::map<std::string, Network<float>> pruned;
  std::vector<TestSample> test;
  double seconds = 0.0;
};

Outcome desk_end_to_end(const RunConfig& cfg, const fs::path& out, TrainedModels& models) {
  const auto t0 = Clock::now();
  const fs::path data = out / "data";
  fs::remove_all(data);
  synthesize_dataset(cfg.synth, data);
  const Dataset ds = load_dataset(data);

  for (const auto& cd : ds.classes) {
    models.test.insert(models.test.end(), cd.test.begin(), cd.test.end());
    for (Variant v : {Variant::full, Variant::pruned}) {
      NetworkConfig nc = cfg.network;
      nc.variant = v;
      const auto tc0 = Clock::now();
      const TrainState st = train(cd.train, nc, cfg.dagen, cfg.loss, cfg.train);
      save_checkpoint(out / (cd.name + "_" + to_string(v) + ".ckpt"), st.checkpoint(cfg.train));
      std::cout << "      trained " << cd.name << " " << to_string(v) << " in " << fmt(seconds_since(tc0), 4)
                << " s, final L_comb " << fmt(st.log.back().comb) << std::endl;
      (v == Variant::full ? models.full : models.pruned).emplace(cd.name, st.net);
    }
  }
  const auto scorer = [](const std::map<std::string, Network<float>>& nets) {
    return [&nets](const std::string& category) -> Scorer {
      const Network<float>* net = &nets.at(category);
      return [net](const PointCloud& c) { return score(*net, c); };
    };
  };
  const EvalResult full = evaluate(models.test, scorer(models.full));
  const EvalResult pruned = evaluate(models.test, scorer(models.pruned));
  write_file_atomic(out / "metrics_full.csv", eval_csv(full));
  write_file_atomic(out / "metrics_pruned.csv", eval_csv(pruned));
  models.seconds = seconds_since(t0);

  const double fo = full.o_auroc.value_or(0.0);
  const double fp = full.p_auroc.value_or(0.0);
  const double po = pruned.o_auroc.value_or(0.0);
  const bool pass = cfg.train.epochs <= 200 && fo >= 0.85 && fp >= 0.80 && std::abs(fo - po) <= 0.08 &&
                    models.seconds <= 3.0 * 3600.0;
  std::string per_class;
  for (const auto& c : full.categories) {
    per_class += " " + c.category + "=" + fmt(c.o_auroc.value_or(0.0), 3) + "/" + fmt(c.p_auroc.value_or(0.0), 3);
  }
  return {pass, "full O-AUROC " + fmt(fo) + " P-AUROC " + fmt(fp) + ", pruned O-AUROC " + fmt(po) + " P-AUROC " +
                    fmt(pruned.p_auroc.value_or(0.0)) + ", " + std::to_string(cfg.train.epochs) + " epochs, " +
                    fmt(models.seconds / 60.0, 3) + " min; per class O/P:" + per_class};
}

double mean_distance(const Points& a, const Points& b) { return (a - b).rowwise().norm().mean(); }

Outcome restoration(const RunConfig& cfg, const TrainedModels& models) {
  std::size_t improved = 0;
  std::size_t total = 0;
  double damaged_sum = 0.0;
  double restored_sum = 0.0;
  for (const auto& s : models.test) {
    if (s.label) continue;
    DaGenParams p = cfg.dagen;
    p.rng_seed = 9000 + total;
    const auto damaged = generate(s.cloud, p);
    const auto pred = models.full.at(s.category).forward(damaged.perturbed);
    const PointCloud restored = restore(damaged.perturbed, pred);
    const double d_damaged = mean_distance(damaged.perturbed.points, s.cloud.points);
    const double d_restored = mean_distance(restored.points, s.cloud.points);
    damaged_sum += d_damaged;
    restored_sum += d_restored;
    if (d_restored < d_damaged) ++improved;
    ++total;
  }
  const double share = static_cast<double>(improved) / static_cast<double>(total);
  return {share >= 0.9, std::to_string(improved) + "/" + std::to_string(total) + " samples improved, mean distance " +
                            fmt(damaged_sum / static_cast<double>(total)) + " -> " +
                            fmt(restored_sum / static_cast<double>(total))};
}

Outcome hqc_exactness_and_speed(const TrainedModels& models) {
  std::map<std::string, std::vector<PointCloud>> by_category;
  for (const auto& s : models.test) by_category[s.category].push_back(s.cloud);

  std::size_t problems = 0;
  std::size_t samples = 0;
  double hqc_seconds = 0.0;
  double full_seconds = 0.0;
  for (const auto& [category, clouds] : by_category) {
    const Network<float>* vp = &models.pruned.at(category);
    const Network<float>* vo = &models.full.at(category);
    const Scorer pruned = [vp](const PointCloud& c) { return score(*vp, c); };
    const Scorer full = [vo](const PointCloud& c) { return score(*vo, c); };
    samples += clouds.size();

    // Best of three timings for each pipeline, interleaved.
    double best_hqc = 1e300;
    double best_full = 1e300;
    HqcReport rep;
    std::vector<ScoreResult> reference(clouds.size());
    for (int round = 0; round < 3; ++round) {
      auto t0 = Clock::now();
      rep = hqc_run(clouds, pruned, full, HqcConfig{0.25});
      best_hqc = std::min(best_hqc, seconds_since(t0));
      t0 = Clock::now();
      for (std::size_t i = 0; i < clouds.size(); ++i) reference[i] = full(clouds[i]);
      best_full = std::min(best_full, seconds_since(t0));
    }
    hqc_seconds += best_hqc;
    full_seconds += best_full;

    const auto expected = static_cast<std::size_t>(std::floor(0.25 * static_cast<double>(clouds.size())));
    if (rep.bypass_count != expected) ++problems;
    double max_bypassed = -1e300;
    double min_rescored = 1e300;
    for (const auto& r : rep.records) {
      if (r.stage == HqcStage::bypassed_normal) {
        max_bypassed = std::max(max_bypassed, r.pruned_score);
        if (r.final_point_scores) ++problems;
      } else {
        min_rescored = std::min(min_rescored, r.pruned_score);
        const auto& ref = reference[r.sample_id];
        if (r.final_object_score != ref.object_score || *r.final_point_scores != ref.point_scores) ++problems;
      }
    }
    if (max_bypassed > min_rescored) ++problems;
  }
  const bool exact = problems == 0 && samples >= 20;
  const bool faster = hqc_seconds < full_seconds;
  return {exact && faster, std::string(exact ? "exact" : std::to_string(problems) + " exactness problems") + " over " +
                               std::to_string(samples) + " samples; hqc " + fmt(hqc_seconds) + " s vs full-only " +
                               fmt(full_seconds) + " s (ratio " + fmt(hqc_seconds / full_seconds) + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance run"};
  std::string out = "acceptance_out";
  std::string config = MC4AD_DESK_CONFIG;
  app.add_option("--out", out, "working directory for data, checkpoints and metrics");
  app.add_option("--config", config, "desk-scale run configuration");
  CLI11_PARSE(app, argc, argv);

  try {
    const RunConfig cfg = load_run_config(config);
    cfg.validate();
    fs::create_directories(out);

    report(1, "loss gradients", loss_gradients());
    report(2, "network gradients", network_gradients());
    report(3, "pseudo-anomaly invariants", dagen_invariants());
    report(4, "symmetry loss fixed points", symmetry_fixed_points());
    report(5, "metric oracles", metric_oracles());
    report(7, "pruning ratio", pruning_ratio());
    report(10, "skip gate", gate_behaviour());

    TrainedModels models;
    report(8, "desk-scale end to end", desk_end_to_end(cfg, out, models));
    report(9, "restoration", restoration(cfg, models));
    report(6, "quality-control exactness and speed", hqc_exactness_and_speed(models));
  } catch (const std::exception& e) {
    std::cout << "FAIL  acceptance aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
