#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "fata/tokenize.hpp"
#include "fata/vocab.hpp"

namespace fata {

inline constexpr int kShardVersion = 1;

/// Binary shard directory: manifest.json plus little-endian arrays
/// static.i32, dynamic.i32, pad.i32, label.i32 (-1 = none) and times.f32.
/// Original (unmasked) ids are stored; masking state is rebuilt on load.
void write_shard(const std::filesystem::path& dir, std::span<const TokenizedWindow> windows,
                 const Vocabulary& vocab, LabelPolicy policy);

std::vector<TokenizedWindow> read_shard(const std::filesystem::path& dir, const Vocabulary& vocab);

/// Human-readable form of the same windows (tokens decoded).
void write_windows_json(const std::filesystem::path& path, std::span<const TokenizedWindow> windows,
                        const Vocabulary& vocab);

}  // namespace fata
