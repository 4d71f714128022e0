#pragma once

#include "mmg/episode.hpp"

#include <filesystem>
#include <vector>

namespace mmg {

// On-disk episode layout: a directory holding
//   manifest.json  - class id, label, dims, regions, alignment, blob paths
//   visual.bin     - patch embeddings (T*N x d_V) then attention (T x N)
//   text.bin       - text embedding (1 x d_T)
// Blobs are little-endian float32, row-major, each section preceded by
// two little-endian uint32 dimensions; every blob starts with the magic
// "MMGEMB01".  Values are quantized to float32, so save -> load -> save
// reproduces files byte for byte.
inline constexpr char kEpisodeMagic[9] = "MMGEMB01";

void save_episode(const Episode& ep, const std::filesystem::path& dir);
Episode load_episode(const std::filesystem::path& dir);

// A dataset directory holds dataset.json (episode subdirectory names in
// order plus a summary) and one subdirectory per episode.
void save_dataset(const std::vector<Episode>& ds,
                  const std::filesystem::path& dir);
std::vector<Episode> load_dataset(const std::filesystem::path& dir);

} // namespace mmg
