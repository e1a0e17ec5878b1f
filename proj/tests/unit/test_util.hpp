#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "hce/dataset.hpp"

namespace hce::test {

inline std::filesystem::path tmp_path(const std::string& name) {
  const auto dir = std::filesystem::path(HCE_TEST_TMPDIR) / "unit_tmp";
  std::filesystem::create_directories(dir);
  return dir / name;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// A record inside every schema range.
inline HceRecord valid_record() {
  HceRecord r;
  r.t_glass = 80;
  r.loss = 300;
  r.eff = 0.9;
  r.eff_ref = 0.93;
  r.ph2 = 0.5;
  r.t_glass_inf = 60;
  r.t_glass_sup = 80;
  r.t_htf = 340;
  r.hce_loc = 12;
  r.hce_subfield = 'C';
  r.hce_column = 40;
  r.plant = 2;
  r.broken = 1;
  return r;
}

inline std::string csv_header() {
  std::string h;
  for (std::size_t c = 0; c < schema::kColumns.size(); ++c) {
    if (c) h += ',';
    h += schema::kColumns[c];
  }
  return h + "\n";
}

}  // namespace hce::test
