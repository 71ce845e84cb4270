// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

namespace fairjudge {

std::string read_file(const std::filesystem::path& path);

// Writes through a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

// Append-only artifact write: an existing file with identical bytes is left
// alone, a differing one raises ArtifactExists unless overwrite is set.
void write_artifact(const std::filesystem::path& path, const std::string& bytes,
                    bool overwrite = false);

}  // namespace fairjudge
