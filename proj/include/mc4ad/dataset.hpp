#pragma once

// Dataset tree layout and the synthetic intra-class-variance generator.
//
//   <root>/manifest.json
//   <root>/<class>/train/*.ply        normal clouds only
//   <root>/<class>/test/*.ply         normal and anomalous clouds
//   <root>/<class>/gt/<stem>.txt      per-point 0/1 masks aligned to test files

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "mc4ad/dagen.hpp"
#include "mc4ad/io.hpp"
#include "mc4ad/metrics.hpp"
#include "mc4ad/parallel.hpp"

namespace mc4ad {

inline constexpr int kSynthGeneratorVersion = 1;

enum class Primitive { sphere, cylinder, box, cone };

inline std::string to_string(Primitive p) {
  switch (p) {
    case Primitive::sphere: return "sphere";
    case Primitive::cylinder: return "cylinder";
    case Primitive::box: return "box";
    case Primitive::cone: return "cone";
  }
  return "?";
}

inline Primitive primitive_from_string(const std::string& s) {
  for (auto p : {Primitive::sphere, Primitive::cylinder, Primitive::box, Primitive::cone}) {
    if (to_string(p) == s) return p;
  }
  throw ConfigError("synth.classes: unknown primitive \"" + s + "\"");
}

inline void to_json(nlohmann::json& j, const Interval& r) { j = nlohmann::json::array({r.lo, r.hi}); }

inline void from_json(const nlohmann::json& j, Interval& r) {
  if (!j.is_array() || j.size() != 2) throw ConfigError("interval must be a two-element array");
  r.lo = j[0].get<double>();
  r.hi = j[1].get<double>();
}

inline void to_json(nlohmann::json& j, const DaGenParams& p) {
  j = nlohmann::json{{"patch_count", p.patch_count},
                     {"gamma_range", p.gamma},
                     {"lambda_range", p.lambda},
                     {"sigma_range", p.sigma},
                     {"perturb_fraction", p.perturb_fraction},
                     {"rng_seed", p.rng_seed}};
  j["patch_size"] = p.patch_size ? nlohmann::json(*p.patch_size) : nlohmann::json(nullptr);
}

inline void from_json(const nlohmann::json& j, DaGenParams& p) {
  for (const auto& [key, value] : j.items()) {
    if (key == "patch_count") p.patch_count = value.get<int>();
    else if (key == "patch_size") p.patch_size = value.is_null() ? std::nullopt : std::optional<int>(value.get<int>());
    else if (key == "gamma_range") p.gamma = value.get<Interval>();
    else if (key == "lambda_range") p.lambda = value.get<Interval>();
    else if (key == "sigma_range") p.sigma = value.get<Interval>();
    else if (key == "perturb_fraction") p.perturb_fraction = value.get<double>();
    else if (key == "rng_seed") p.rng_seed = value.get<std::uint64_t>();
    else throw ConfigError("unknown key dagen." + key);
  }
}

struct SynthConfig {
  std::vector<Primitive> classes{Primitive::sphere, Primitive::cylinder, Primitive::box, Primitive::cone};
  int subclasses_per_class = 2;
  int points_per_cloud = 2048;
  int train_per_class = 4;
  int test_normal_per_class = 12;
  int test_anomalous_per_class = 12;
  double noise_variance = 0.002;
  DaGenParams defect_params;
  std::uint64_t seed = 0;

  void validate() const {
    if (classes.empty()) throw ConfigError("synth.classes must not be empty");
    if (subclasses_per_class < 1) throw ConfigError("synth.subclasses_per_class must be >= 1");
    if (points_per_cloud < 16) throw ConfigError("synth.points_per_cloud must be >= 16");
    if (train_per_class < 1) throw ConfigError("synth.train_per_class must be >= 1");
    if (test_normal_per_class < 1) throw ConfigError("synth.test_normal_per_class must be >= 1");
    if (test_anomalous_per_class < 1) throw ConfigError("synth.test_anomalous_per_class must be >= 1");
    if (!(noise_variance >= 0.0)) throw ConfigError("synth.noise_variance must be >= 0");
    defect_params.validate();
  }
};

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
  std::vector<std::string> names;
  for (auto p : c.classes) names.push_back(to_string(p));
  j = nlohmann::json{{"classes", names},
                     {"subclasses_per_class", c.subclasses_per_class},
                     {"points_per_cloud", c.points_per_cloud},
                     {"train_per_class", c.train_per_class},
                     {"test_normal_per_class", c.test_normal_per_class},
                     {"test_anomalous_per_class", c.test_anomalous_per_class},
                     {"noise_variance", c.noise_variance},
                     {"defect_params", c.defect_params},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, SynthConfig& c) {
  for (const auto& [key, value] : j.items()) {
    if (key == "classes") {
      c.classes.clear();
      for (const auto& s : value) c.classes.push_back(primitive_from_string(s.get<std::string>()));
    } else if (key == "subclasses_per_class") c.subclasses_per_class = value.get<int>();
    else if (key == "points_per_cloud") c.points_per_cloud = value.get<int>();
    else if (key == "train_per_class") c.train_per_class = value.get<int>();
    else if (key == "test_normal_per_class") c.test_normal_per_class = value.get<int>();
    else if (key == "test_anomalous_per_class") c.test_anomalous_per_class = value.get<int>();
    else if (key == "noise_variance") c.noise_variance = value.get<double>();
    else if (key == "defect_params") {
      DaGenParams p = c.defect_params;
      from_json(value, p);
      c.defect_params = p;
    } else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else throw ConfigError("unknown key synth." + key);
  }
}

/// Shape parameters of one subclass; `t` in [0, 1] spreads the subclasses.
struct PrimitiveShape {
  Primitive kind = Primitive::sphere;
  Vec3 dims = Vec3::Ones();
};

inline PrimitiveShape subclass_shape(Primitive kind, int subclass, int subclasses) {
  const double t = subclasses > 1 ? static_cast<double>(subclass) / (subclasses - 1) : 0.0;
  PrimitiveShape s{kind, Vec3::Ones()};
  switch (kind) {
    case Primitive::sphere: s.dims = Vec3(1.0, 1.0 - 0.2 * t, 1.0 + 0.6 * t); break;       // ellipsoid semi-axes
    case Primitive::cylinder: s.dims = Vec3(0.5 + 0.2 * t, 2.0 - 0.6 * t, 0.0); break;     // radius, height
    case Primitive::box: s.dims = Vec3(1.0, 1.0 - 0.4 * t, 0.6 + 0.6 * t); break;          // edge lengths
    case Primitive::cone: s.dims = Vec3(0.8 + 0.2 * t, 1.5 + 0.8 * t, 0.0); break;         // base radius, height
  }
  return s;
}

/// Area-uniform surface samples of a primitive.
template <class Rng>
Points sample_surface(const PrimitiveShape& shape, std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  Points pts(static_cast<Eigen::Index>(n), 3);
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t i = 0; i < n; ++i) {
    Vec3 p;
    switch (shape.kind) {
      case Primitive::sphere: {
        const Vec3& a = shape.dims;
        const double max_scale = std::max({a.y() * a.z(), a.x() * a.z(), a.x() * a.y()});
        for (;;) {
          Vec3 d(g(rng), g(rng), g(rng));
          d.normalize();
          const double area = Vec3(a.y() * a.z() * d.x(), a.x() * a.z() * d.y(), a.x() * a.y() * d.z()).norm();
          if (u(rng) * max_scale <= area) {
            p = a.cwiseProduct(d);
            break;
          }
        }
        break;
      }
      case Primitive::cylinder: {
        const double r = shape.dims[0];
        const double h = shape.dims[1];
        const double side = two_pi * r * h;
        const double cap = std::numbers::pi * r * r;
        const double pick = u(rng) * (side + 2 * cap);
        const double theta = two_pi * u(rng);
        if (pick < side) {
          p = Vec3(r * std::cos(theta), r * std::sin(theta), (u(rng) - 0.5) * h);
        } else {
          const double rr = r * std::sqrt(u(rng));
          p = Vec3(rr * std::cos(theta), rr * std::sin(theta), pick < side + cap ? 0.5 * h : -0.5 * h);
        }
        break;
      }
      case Primitive::box: {
        const Vec3& e = shape.dims;
        const double areas[3] = {e.y() * e.z(), e.x() * e.z(), e.x() * e.y()};
        const double pick = u(rng) * 2.0 * (areas[0] + areas[1] + areas[2]);
        double acc = 0.0;
        int axis = 0;
        for (; axis < 2; ++axis) {
          acc += 2.0 * areas[axis];
          if (pick < acc) break;
        }
        p = Vec3((u(rng) - 0.5) * e.x(), (u(rng) - 0.5) * e.y(), (u(rng) - 0.5) * e.z());
        p[axis] = (u(rng) < 0.5 ? -0.5 : 0.5) * e[axis];
        break;
      }
      case Primitive::cone: {
        const double r = shape.dims[0];
        const double h = shape.dims[1];
        const double slant = std::sqrt(r * r + h * h);
        const double side = std::numbers::pi * r * slant;
        const double base = std::numbers::pi * r * r;
        const double theta = two_pi * u(rng);
        if (u(rng) * (side + base) < side) {
          // Radius from apex grows linearly, so sqrt gives area-uniform samples.
          const double s = std::sqrt(u(rng));
          p = Vec3(s * r * std::cos(theta), s * r * std::sin(theta), h * (1.0 - s) - 0.5 * h);
        } else {
          const double rr = r * std::sqrt(u(rng));
          p = Vec3(rr * std::cos(theta), rr * std::sin(theta), -0.5 * h);
        }
        break;
      }
    }
    pts.row(static_cast<Eigen::Index>(i)) = p.transpose();
  }
  return pts;
}

template <class Rng>
void add_gaussian_noise(Points& pts, double variance, Rng& rng) {
  if (variance <= 0.0) return;
  std::normal_distribution<double> g(0.0, std::sqrt(variance));
  for (Eigen::Index i = 0; i < pts.size(); ++i) pts.data()[i] += g(rng);
}

struct GeneratedSample {
  PointCloud cloud;
  Labels mask;
  int subclass = 0;
};

/// One cloud of a class: normalized primitive, optional pseudo-defect, then noise.
inline GeneratedSample synthesize_cloud(const SynthConfig& cfg, Primitive kind, int subclass, bool anomalous,
                                        std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto shape = subclass_shape(kind, subclass, cfg.subclasses_per_class);
  PointCloud cloud = normalize_cloud(PointCloud(sample_surface(shape, static_cast<std::size_t>(cfg.points_per_cloud), rng)));
  GeneratedSample out;
  out.subclass = subclass;
  out.mask.assign(cloud.size(), 0);
  if (anomalous) {
    DaGenParams da = cfg.defect_params;
    da.rng_seed = rng();
    const auto sample = generate(cloud, da);
    cloud.points = sample.perturbed.points;
    out.mask = sample.mask;
  }
  add_gaussian_noise(cloud.points, cfg.noise_variance, rng);
  out.cloud = std::move(cloud);
  return out;
}

namespace detail {

inline std::string numbered(const std::string& prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%03d", prefix.c_str(), i);
  return buf;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(c)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

}  // namespace detail

inline nlohmann::json synth_manifest(const SynthConfig& cfg) {
  nlohmann::json classes = nlohmann::json::array();
  for (auto p : cfg.classes) {
    classes.push_back({{"name", to_string(p)},
                       {"subclasses", cfg.subclasses_per_class},
                       {"train", cfg.train_per_class},
                       {"test_normal", cfg.test_normal_per_class},
                       {"test_anomalous", cfg.test_anomalous_per_class}});
  }
  return nlohmann::json{{"generator", "mc4ad-synth"},
                        {"generator_version", kSynthGeneratorVersion},
                        {"seed", cfg.seed},
                        {"points_per_cloud", cfg.points_per_cloud},
                        {"noise_variance", cfg.noise_variance},
                        {"classes", classes},
                        {"config", cfg}};
}

/// Writes a full dataset tree under `root`. Train clouds cycle through the
/// subclasses so every subclass is represented; masks come from the injected
/// pseudo-defects.
inline void synthesize_dataset(const SynthConfig& cfg, const fs::path& root) {
  cfg.validate();
  fs::create_directories(root);
  parallel_for(cfg.classes.size(), [&](std::size_t ci) {
    const Primitive kind = cfg.classes[ci];
    const fs::path dir = root / to_string(kind);
    for (int i = 0; i < cfg.train_per_class; ++i) {
      const auto s = synthesize_cloud(cfg, kind, i % cfg.subclasses_per_class, false,
                                      detail::mix_seed(cfg.seed, ci, 0, static_cast<std::uint64_t>(i)));
      save_cloud(dir / "train" / (detail::numbered("", i) + ".ply"), s.cloud);
    }
    int index = 0;
    for (int kindex = 0; kindex < 2; ++kindex) {
      const bool anomalous = kindex == 1;
      const int count = anomalous ? cfg.test_anomalous_per_class : cfg.test_normal_per_class;
      for (int i = 0; i < count; ++i, ++index) {
        const auto s = synthesize_cloud(cfg, kind, i % cfg.subclasses_per_class, anomalous,
                                        detail::mix_seed(cfg.seed, ci, 1, static_cast<std::uint64_t>(index)));
        const std::string stem = detail::numbered(anomalous ? "defect_" : "good_", i);
        save_cloud(dir / "test" / (stem + ".ply"), s.cloud);
        save_mask(dir / "gt" / (stem + ".txt"), s.mask);
      }
    }
  });
  write_file_atomic(root / "manifest.json", synth_manifest(cfg).dump(2) + "\n");
}

struct ClassData {
  std::string name;
  std::vector<PointCloud> train;
  std::vector<std::string> train_names;
  std::vector<TestSample> test;
};

struct Dataset {
  fs::path root;
  std::vector<ClassData> classes;  // sorted by name
};

namespace detail {

inline std::vector<fs::path> cloud_files(const fs::path& dir) {
  std::vector<fs::path> files;
  if (!fs::is_directory(dir)) return files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = lower_ext(e.path());
    if (e.is_regular_file() && (ext == ".ply" || ext == ".xyz")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace detail

/// Loads a dataset tree. Clouds are normalized on load; a test file without a
/// gt mask is treated as normal with an all-zero mask.
inline Dataset load_dataset(const fs::path& root, bool normalize = true) {
  if (!fs::is_directory(root)) throw DataError("dataset root " + root.string() + " is not a directory");
  Dataset ds;
  ds.root = root;
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && (fs::is_directory(e.path() / "train") || fs::is_directory(e.path() / "test"))) {
      class_dirs.push_back(e.path());
    }
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw DataError("dataset root " + root.string() + " contains no class directories");
  for (const auto& dir : class_dirs) {
    ClassData cd;
    cd.name = dir.filename().string();
    for (const auto& f : detail::cloud_files(dir / "train")) {
      PointCloud c = load_cloud(f);
      cd.train.push_back(normalize ? normalize_cloud(c) : c);
      cd.train_names.push_back(f.stem().string());
    }
    for (const auto& f : detail::cloud_files(dir / "test")) {
      TestSample s;
      s.category = cd.name;
      s.name = f.stem().string();
      PointCloud c = load_cloud(f);
      s.cloud = normalize ? normalize_cloud(c) : c;
      const fs::path mask_path = dir / "gt" / (s.name + ".txt");
      s.mask = fs::exists(mask_path) ? load_mask(mask_path, s.cloud.size()) : Labels(s.cloud.size(), 0);
      s.label = std::any_of(s.mask->begin(), s.mask->end(), [](std::uint8_t m) { return m != 0; }) ? 1 : 0;
      s.cloud.point_labels = s.mask;
      cd.test.push_back(std::move(s));
    }
    ds.classes.push_back(std::move(cd));
  }
  return ds;
}

}  // namespace mc4ad
