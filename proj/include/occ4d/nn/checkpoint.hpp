#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "occ4d/nn/optimizer.hpp"
#include "occ4d/nn/param.hpp"

namespace occ4d::nn {

// Versioned flat binary checkpoint: magic, then for every parameter its name,
// shape and raw 64-bit data (little-endian, bit-exact round trip), then the
// optimizer moments and named extra records (training cursor, counters, ...).
constexpr char kCheckpointMagic[8] = {'O', '4', 'D', 'C', 'K', 'P', 'T', '1'};

struct CheckpointExtras {
  std::map<std::string, std::vector<std::int64_t>> ints;
  std::map<std::string, std::vector<double>> doubles;

  std::int64_t int_scalar(const std::string& key) const {
    auto it = ints.find(key);
    if (it == ints.end() || it->second.size() != 1)
      throw std::runtime_error("checkpoint: missing scalar " + key);
    return it->second[0];
  }
};

namespace detail {

template <typename T>
void write_raw(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& is) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
  const auto n = read_raw<std::uint32_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw std::runtime_error("checkpoint: truncated string");
  return s;
}

inline void write_doubles(std::ostream& os, const std::vector<double>& v) {
  write_raw<std::uint64_t>(os, v.size());
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline std::vector<double> read_doubles(std::istream& is) {
  const auto n = read_raw<std::uint64_t>(is);
  std::vector<double> v(n);
  is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw std::runtime_error("checkpoint: truncated data");
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ParameterStore& store,
                            const AdamW* opt = nullptr,
                            const CheckpointExtras& extras = {}) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_raw<std::uint64_t>(os, store.size());
  for (const Parameter& p : store) {
    detail::write_string(os, p.name);
    detail::write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(p.value.ndim()));
    for (std::size_t d : p.value.shape) detail::write_raw<std::uint64_t>(os, d);
    detail::write_doubles(os, p.value.data);
  }
  detail::write_raw<std::uint8_t>(os, opt ? 1 : 0);
  if (opt) {
    AdamW& o = const_cast<AdamW&>(*opt);
    detail::write_raw<std::int64_t>(os, o.step_count());
    for (const Tensor& m : o.moment1()) detail::write_doubles(os, m.data);
    for (const Tensor& v : o.moment2()) detail::write_doubles(os, v.data);
  }
  detail::write_raw<std::uint64_t>(os, extras.ints.size());
  for (const auto& [key, vals] : extras.ints) {
    detail::write_string(os, key);
    detail::write_raw<std::uint64_t>(os, vals.size());
    for (std::int64_t v : vals) detail::write_raw<std::int64_t>(os, v);
  }
  detail::write_raw<std::uint64_t>(os, extras.doubles.size());
  for (const auto& [key, vals] : extras.doubles) {
    detail::write_string(os, key);
    detail::write_doubles(os, vals);
  }
  if (!os) throw std::runtime_error("save_checkpoint: write failed");
}

/// Loads into an already-constructed store; names and shapes must match.
inline CheckpointExtras load_checkpoint(const std::string& path, ParameterStore& store,
                                        AdamW* opt = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  const auto n = detail::read_raw<std::uint64_t>(is);
  if (n != store.size()) throw std::runtime_error("load_checkpoint: parameter count mismatch");
  for (Parameter& p : store) {
    const std::string name = detail::read_string(is);
    if (name != p.name)
      throw std::runtime_error("load_checkpoint: parameter order mismatch at " + name);
    const auto ndim = detail::read_raw<std::uint32_t>(is);
    std::vector<std::size_t> shape(ndim);
    for (auto& d : shape) d = detail::read_raw<std::uint64_t>(is);
    if (shape != p.value.shape) throw std::runtime_error("load_checkpoint: shape mismatch " + name);
    p.value.data = detail::read_doubles(is);
    if (p.value.data.size() != Tensor::numel_of(shape))
      throw std::runtime_error("load_checkpoint: data size mismatch " + name);
  }
  const auto has_opt = detail::read_raw<std::uint8_t>(is);
  if (has_opt) {
    const auto t = detail::read_raw<std::int64_t>(is);
    if (opt) {
      opt->ensure_state(store);
      opt->set_step_count(t);
      for (Tensor& m : opt->moment1()) m.data = detail::read_doubles(is);
      for (Tensor& v : opt->moment2()) v.data = detail::read_doubles(is);
    } else {
      for (std::size_t i = 0; i < 2 * store.size(); ++i) detail::read_doubles(is);
    }
  }
  CheckpointExtras extras;
  const auto n_int = detail::read_raw<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < n_int; ++i) {
    const std::string key = detail::read_string(is);
    const auto len = detail::read_raw<std::uint64_t>(is);
    std::vector<std::int64_t> vals(len);
    for (auto& v : vals) v = detail::read_raw<std::int64_t>(is);
    extras.ints[key] = std::move(vals);
  }
  const auto n_dbl = detail::read_raw<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < n_dbl; ++i) {
    const std::string key = detail::read_string(is);
    extras.doubles[key] = detail::read_doubles(is);
  }
  return extras;
}

}  // namespace occ4d::nn
