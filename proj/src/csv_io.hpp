#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "shiftnas/error.hpp"

namespace shiftnas::detail {

inline std::string fmt_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Truncating open with an optional "# comment" first line.
inline std::ofstream open_csv(const std::filesystem::path& path, const std::string& comment) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  if (!comment.empty()) os << "# " << comment << '\n';
  return os;
}

inline void finish_csv(std::ofstream& os, const std::filesystem::path& path) {
  os.flush();
  if (!os) throw IoError("write to '" + path.string() + "' failed");
}

}  // namespace shiftnas::detail
