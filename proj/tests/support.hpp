#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fedload/fedload.hpp"

namespace testing_support {

// Fresh directory removed on scope exit.
class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "fedload_XXXXXX").string();
    if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline fedload::ConsumptionSeries make_series(std::vector<double> values, std::string id = "b") {
  fedload::ConsumptionSeries s;
  s.building_id = std::move(id);
  s.start = 1514764800;
  s.values = std::move(values);
  return s;
}

inline fedload::ConsumptionSeries ramp(std::size_t n, double start = 1.0, double slope = 0.5) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = start + slope * static_cast<double>(i);
  return make_series(std::move(v));
}

// Two-class population in the shape used by the end-to-end tests.
inline fedload::SynthConfig two_class_config(std::size_t days, std::size_t n_clients,
                                             std::size_t n_holdout, std::uint64_t seed) {
  fedload::SynthConfig cfg;
  cfg.days = days;
  cfg.seed = seed;
  fedload::SynthClass a;
  a.base_kwh = 1.0;
  a.amplitude = 0.6;
  a.week_factor = 1.3;
  a.noise_sigma = 0.03;
  a.n_clients = n_clients;
  a.scale_jitter = 0.2;
  a.n_holdout = n_holdout;
  fedload::SynthClass b = a;
  b.base_kwh = 6.0;
  b.amplitude = 3.5;
  b.week_factor = 0.4;
  b.noise_sigma = 0.15;
  cfg.classes = {a, b};
  return cfg;
}

}  // namespace testing_support
