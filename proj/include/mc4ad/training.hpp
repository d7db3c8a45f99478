#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "mc4ad/checkpoint.hpp"
#include "mc4ad/dagen.hpp"
#include "mc4ad/losses.hpp"
#include "mc4ad/network.hpp"

namespace mc4ad {

struct TrainConfig {
  int batch_size = 32;
  std::optional<double> lr_initial;  // unset: 0.001 (full) or 0.0015 (pruned)
  double lr_min = 0.0;
  int epochs = 200;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;   // epochs; 0 disables periodic checkpoints
  int repeats_per_epoch = 1;  // fresh pseudo-anomalies drawn per training cloud per epoch

  double initial_lr(Variant variant = Variant::full) const {
    return lr_initial.value_or(variant == Variant::pruned ? 0.0015 : 0.001);
  }

  void validate(Variant variant = Variant::full) const {
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (!(lr_min >= 0.0)) throw ConfigError("train.lr_min must be >= 0");
    if (!(initial_lr(variant) > lr_min)) throw ConfigError("train.lr_initial must exceed train.lr_min");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("train.beta1 and train.beta2 must lie in [0, 1)");
    }
    if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
    if (repeats_per_epoch < 1) throw ConfigError("train.repeats_per_epoch must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"batch_size", c.batch_size}, {"lr_min", c.lr_min},
                     {"epochs", c.epochs},         {"beta1", c.beta1},
                     {"beta2", c.beta2},           {"adam_epsilon", c.adam_epsilon},
                     {"seed", c.seed},             {"checkpoint_every", c.checkpoint_every},
                     {"repeats_per_epoch", c.repeats_per_epoch}};
  j["lr_initial"] = c.lr_initial ? nlohmann::json(*c.lr_initial) : nlohmann::json(nullptr);
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  for (const auto& [key, value] : j.items()) {
    if (key == "batch_size") c.batch_size = value.get<int>();
    else if (key == "lr_initial") c.lr_initial = value.is_null() ? std::nullopt : std::optional<double>(value.get<double>());
    else if (key == "lr_min") c.lr_min = value.get<double>();
    else if (key == "epochs") c.epochs = value.get<int>();
    else if (key == "beta1") c.beta1 = value.get<double>();
    else if (key == "beta2") c.beta2 = value.get<double>();
    else if (key == "adam_epsilon") c.adam_epsilon = value.get<double>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else if (key == "checkpoint_every") c.checkpoint_every = value.get<int>();
    else if (key == "repeats_per_epoch") c.repeats_per_epoch = value.get<int>();
    else throw ConfigError("unknown key train." + key);
  }
}

/// Cosine-annealed learning rate at epoch t in [0, epochs].
inline double lr_at(int epoch, const TrainConfig& cfg, Variant variant = Variant::full) {
  if (epoch < 0 || epoch > cfg.epochs) {
    throw ConfigError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.epochs) + "]");
  }
  const double lr0 = cfg.initial_lr(variant);
  const double phase = std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(cfg.epochs);
  return cfg.lr_min + 0.5 * (lr0 - cfg.lr_min) * (1.0 + std::cos(phase));
}

/// Adaptive-moment update. Entries whose batch gradient is exactly zero are
/// left untouched, moments included.
template <class T>
class Adam {
 public:
  Adam(const std::vector<Parameter<T>>& params, double beta1, double beta2, double epsilon)
      : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
    for (const auto& p : params) {
      m_.push_back(Matrix<T>::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Matrix<T>::Zero(p.value.rows(), p.value.cols()));
    }
  }

  void step(std::vector<Parameter<T>>& params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const T b1 = static_cast<T>(beta1_);
    const T b2 = static_cast<T>(beta2_);
    const T step_size = static_cast<T>(lr / bc1);
    const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
    const T eps = static_cast<T>(epsilon_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      T* w = params[i].value.data();
      const T* g = params[i].grad.data();
      T* m = m_[i].data();
      T* v = v_[i].data();
      for (Eigen::Index k = 0; k < params[i].value.size(); ++k) {
        if (g[k] == T(0)) continue;
        m[k] = b1 * m[k] + (T(1) - b1) * g[k];
        v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
        w[k] -= step_size * m[k] / (std::sqrt(v[k]) * inv_sqrt_bc2 + eps);
      }
    }
  }

  std::uint64_t steps() const { return t_; }

  OptimizerState state() const {
    OptimizerState s;
    for (std::size_t i = 0; i < m_.size(); ++i) {
      const Matrix<float> m = m_[i].template cast<float>();
      const Matrix<float> v = v_[i].template cast<float>();
      s.first_moment.emplace_back(m.data(), m.data() + m.size());
      s.second_moment.emplace_back(v.data(), v.data() + v.size());
    }
    return s;
  }

  void restore(const OptimizerState& s, std::uint64_t steps) {
    if (s.first_moment.size() != m_.size()) throw DataError("optimizer state does not match the network");
    for (std::size_t i = 0; i < m_.size(); ++i) {
      if (s.first_moment[i].size() != static_cast<std::size_t>(m_[i].size())) {
        throw DataError("optimizer state does not match the network");
      }
      for (Eigen::Index k = 0; k < m_[i].size(); ++k) {
        m_[i].data()[k] = static_cast<T>(s.first_moment[i][static_cast<std::size_t>(k)]);
        v_[i].data()[k] = static_cast<T>(s.second_moment[i][static_cast<std::size_t>(k)]);
      }
    }
    t_ = steps;
  }

 private:
  double beta1_;
  double beta2_;
  double epsilon_;
  std::uint64_t t_ = 0;
  std::vector<Matrix<T>> m_;
  std::vector<Matrix<T>> v_;
};

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double dist = 0.0;
  double dir = 0.0;
  double sym = 0.0;
  double comb = 0.0;
  double wall_seconds = 0.0;
};

inline std::string epoch_log_csv_header() { return "epoch,lr,L_dist,L_dir,L_sym,L_comb,wall_seconds"; }

inline std::string to_csv_row(const EpochLog& e) {
  std::ostringstream os;
  os.precision(9);
  os << e.epoch << ',' << e.lr << ',' << e.dist << ',' << e.dir << ',' << e.sym << ',' << e.comb << ','
     << e.wall_seconds;
  return os.str();
}

/// Deterministic sub-seed for one (epoch, position) pair of a training run.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

struct TrainState {
  Network<float> net;
  std::uint64_t init_seed = 0;
  std::uint64_t step = 0;
  int next_epoch = 0;
  std::vector<EpochLog> log;
  OptimizerState optimizer;

  Checkpoint checkpoint(const TrainConfig& cfg) const {
    Checkpoint ck = make_checkpoint(net, init_seed, step);
    ck.meta = nlohmann::json{{"next_epoch", next_epoch},
                             {"variant", to_string(net.config().variant)},
                             {"lr_initial", cfg.initial_lr(net.config().variant)},
                             {"train", cfg}};
    ck.optimizer = optimizer;
    return ck;
  }
};

struct TrainHooks {
  std::function<void(const EpochLog&)> on_epoch;
  std::function<void(const TrainState&)> on_checkpoint;
};

/// Online pseudo-anomaly training with gradient accumulation over
/// `batch_size` single-cloud passes. An epoch visits every training cloud
/// `repeats_per_epoch` times in a seeded shuffled order; a trailing partial
/// batch is applied at the end of the epoch.
inline TrainState train(const std::vector<PointCloud>& train_clouds, const NetworkConfig& net_cfg,
                        const DaGenParams& da_params, const LossConfig& loss_cfg, const TrainConfig& train_cfg,
                        const Checkpoint* resume = nullptr, const TrainHooks& hooks = {}) {
  if (train_clouds.empty()) throw DataError("train: empty training set");
  net_cfg.validate();
  da_params.validate();
  loss_cfg.validate();
  train_cfg.validate(net_cfg.variant);

  std::vector<PointCloud> clouds;
  clouds.reserve(train_clouds.size());
  for (const auto& c : train_clouds) clouds.push_back(c.normals ? c : estimate_normals(c).cloud);

  TrainState state;
  state.init_seed = train_cfg.seed;
  if (resume) {
    if (!(resume->config == net_cfg)) throw ConfigError("train: resume checkpoint was built with a different network config");
    state.net = resume->network<float>();
    state.init_seed = resume->seed;
    state.step = resume->step;
    state.next_epoch = resume->meta.value("next_epoch", 0);
  } else {
    state.net = Network<float>::build(net_cfg, train_cfg.seed);
  }
  Adam<float> adam(state.net.params(), train_cfg.beta1, train_cfg.beta2, train_cfg.adam_epsilon);
  if (resume && resume->optimizer) adam.restore(*resume->optimizer, state.step);

  const Variant variant = net_cfg.variant;
  const std::size_t per_epoch = clouds.size() * static_cast<std::size_t>(train_cfg.repeats_per_epoch);
  Tape<float> tape;
  LossGrad<float> grad;

  for (int epoch = state.next_epoch; epoch < train_cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at(epoch, train_cfg, variant);
    std::vector<int> order(per_epoch);
    for (std::size_t i = 0; i < per_epoch; ++i) order[i] = static_cast<int>(i % clouds.size());
    std::mt19937_64 shuffle_rng(derive_seed(train_cfg.seed, static_cast<std::uint64_t>(epoch), ~0ULL));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochLog entry;
    entry.epoch = epoch;
    entry.lr = lr;
    state.net.zero_grad();
    int accumulated = 0;
    for (std::size_t pos = 0; pos < per_epoch; ++pos) {
      DaGenParams da = da_params;
      da.rng_seed = derive_seed(train_cfg.seed, static_cast<std::uint64_t>(epoch), pos);
      const PseudoAnomalySample sample = generate(clouds[static_cast<std::size_t>(order[pos])], da);
      const PreparedCloud<float> prep = state.net.prepare(sample.perturbed);
      const ForcePrediction<float> pred = state.net.forward(prep, &tape);
      const Matrix<float> target = supervision_target<float>(sample.displacement, loss_cfg);
      const LossBreakdown<float> loss = combined_loss(pred, target, loss_cfg, &grad);
      for (const auto& [name, v] : {std::pair{"L_dist", loss.dist}, {"L_dir", loss.dir}, {"L_sym", loss.sym}}) {
        if (!std::isfinite(v)) {
          throw NumericalError("train: non-finite " + std::string(name) + " at epoch " + std::to_string(epoch) +
                               ", step " + std::to_string(state.step) + ", lr " + std::to_string(lr));
        }
      }
      state.net.backward(tape, grad.external, grad.internal);
      entry.dist += loss.dist;
      entry.dir += loss.dir;
      entry.sym += loss.sym;
      entry.comb += loss.total;
      ++accumulated;
      if (accumulated == train_cfg.batch_size || pos + 1 == per_epoch) {
        const float scale = 1.0f / static_cast<float>(accumulated);
        for (auto& p : state.net.params()) p.grad *= scale;
        adam.step(state.net.params(), lr);
        state.net.zero_grad();
        ++state.step;
        accumulated = 0;
      }
    }
    const double inv = 1.0 / static_cast<double>(per_epoch);
    entry.dist *= inv;
    entry.dir *= inv;
    entry.sym *= inv;
    entry.comb *= inv;
    entry.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    state.log.push_back(entry);
    state.next_epoch = epoch + 1;
    if (hooks.on_epoch) hooks.on_epoch(entry);
    if (hooks.on_checkpoint && train_cfg.checkpoint_every > 0 && state.next_epoch % train_cfg.checkpoint_every == 0) {
      state.optimizer = adam.state();
      hooks.on_checkpoint(state);
    }
  }
  state.optimizer = adam.state();
  return state;
}

}  // namespace mc4ad
