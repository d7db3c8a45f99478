#pragma once

// Binary checkpoint container. All integers little-endian.
//
//   char[8]  magic "MC4ADCKP"
//   u32      format version (1)
//   u32      length, then UTF-8 NetworkConfig JSON
//   u64      rng seed used for initialization
//   u64      optimizer step counter
//   u32      length, then UTF-8 metadata JSON (training state; may be "{}")
//   u32      parameter count P
//   P times: u32 name length, name, u32 rows, u32 cols, f32[rows*cols] row-major
//   u32      optimizer flag (0 or 1)
//   if 1:    P times: f32[size] first moment, f32[size] second moment

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"

#include "mc4ad/network.hpp"

namespace mc4ad {

inline constexpr char kCheckpointMagic[8] = {'M', 'C', '4', 'A', 'D', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct OptimizerState {
  std::vector<std::vector<float>> first_moment;
  std::vector<std::vector<float>> second_moment;
};

struct Checkpoint {
  NetworkConfig config;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<Parameter<float>> params;
  std::optional<OptimizerState> optimizer;

  template <class T>
  Network<T> network() const {
    Network<float> net = Network<float>::build(config, seed);
    if (net.params().size() != params.size()) {
      throw DataError("checkpoint: parameter count " + std::to_string(params.size()) +
                      " does not match config (" + std::to_string(net.params().size()) + ")");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& dst = net.params()[i];
      const auto& src = params[i];
      if (dst.name != src.name || dst.value.rows() != src.value.rows() || dst.value.cols() != src.value.cols()) {
        throw DataError("checkpoint: parameter '" + src.name + "' does not match config layout ('" + dst.name + "')");
      }
      dst.value = src.value;
    }
    if constexpr (std::is_same_v<T, float>) {
      return net;
    } else {
      return net.template cast<T>();
    }
  }
};

template <class T>
Checkpoint make_checkpoint(const Network<T>& net, std::uint64_t seed, std::uint64_t step) {
  Checkpoint ck;
  ck.config = net.config();
  ck.seed = seed;
  ck.step = step;
  for (const auto& p : net.params()) {
    Parameter<float> q;
    q.name = p.name;
    q.value = p.value.template cast<float>();
    ck.params.push_back(std::move(q));
  }
  return ck;
}

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

inline void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void put_floats(std::ostream& os, const float* data, std::size_t count) {
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(float)));
}

template <class U>
U get(std::istream& is) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(U))) throw DataError("checkpoint: truncated file");
  return v;
}

inline std::string get_string(std::istream& is) {
  const auto len = get<std::uint32_t>(is);
  std::string s(len, '\0');
  if (len > 0 && !is.read(s.data(), len)) throw DataError("checkpoint: truncated file");
  return s;
}

inline void get_floats(std::istream& is, float* data, std::size_t count) {
  if (count > 0 && !is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(float)))) {
    throw DataError("checkpoint: truncated file");
  }
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put<std::uint32_t>(os, kCheckpointVersion);
  detail::put_string(os, nlohmann::json(ck.config).dump());
  detail::put<std::uint64_t>(os, ck.seed);
  detail::put<std::uint64_t>(os, ck.step);
  detail::put_string(os, ck.meta.dump());
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(ck.params.size()));
  for (const auto& p : ck.params) {
    detail::put_string(os, p.name);
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(p.value.rows()));
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(p.value.cols()));
    detail::put_floats(os, p.value.data(), p.size());
  }
  detail::put<std::uint32_t>(os, ck.optimizer ? 1u : 0u);
  if (ck.optimizer) {
    for (std::size_t i = 0; i < ck.params.size(); ++i) {
      detail::put_floats(os, ck.optimizer->first_moment[i].data(), ck.params[i].size());
      detail::put_floats(os, ck.optimizer->second_moment[i].data(), ck.params[i].size());
    }
  }
}

inline Checkpoint read_checkpoint(std::istream& is) {
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw DataError("checkpoint: bad magic");
  }
  const auto version = detail::get<std::uint32_t>(is);
  if (version != kCheckpointVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  try {
    ck.config = nlohmann::json::parse(detail::get_string(is)).get<NetworkConfig>();
    ck.seed = detail::get<std::uint64_t>(is);
    ck.step = detail::get<std::uint64_t>(is);
    ck.meta = nlohmann::json::parse(detail::get_string(is));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: malformed header JSON: ") + e.what());
  }
  const auto count = detail::get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    Parameter<float> p;
    p.name = detail::get_string(is);
    const auto rows = detail::get<std::uint32_t>(is);
    const auto cols = detail::get<std::uint32_t>(is);
    p.value.resize(rows, cols);
    detail::get_floats(is, p.value.data(), p.size());
    ck.params.push_back(std::move(p));
  }
  if (detail::get<std::uint32_t>(is) == 1u) {
    OptimizerState opt;
    for (const auto& p : ck.params) {
      opt.first_moment.emplace_back(p.size());
      opt.second_moment.emplace_back(p.size());
      detail::get_floats(is, opt.first_moment.back().data(), p.size());
      detail::get_floats(is, opt.second_moment.back().data(), p.size());
    }
    ck.optimizer = std::move(opt);
  }
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw DataError("cannot write checkpoint " + tmp.string());
    write_checkpoint(os, ck);
    if (!os) throw DataError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  return read_checkpoint(is);
}

}  // namespace mc4ad
