// SPDX-License-Identifier: Apache-2.0
#include "fairjudge/io.hpp"

#include <fstream>
#include <sstream>
#include <system_error>

#include "fairjudge/error.hpp"

namespace fairjudge {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  std::error_code ec;
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw Error(ErrorCode::Io, "cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::Io, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot rename to " + path.string() + ": " + ec.message());
}

void write_artifact(const std::filesystem::path& path, const std::string& bytes, bool overwrite) {
  if (!overwrite && std::filesystem::exists(path)) {
    if (read_file(path) == bytes) return;
    throw Error(ErrorCode::ArtifactExists, path.string() + " exists with different content");
  }
  write_file_atomic(path, bytes);
}

}  // namespace fairjudge
