#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "nvl/configspace.hpp"
#include "nvl/dynamics.hpp"
#include "nvl/gibbs.hpp"

namespace nvl {

// Layout: magic "NVLSNAP1", u32 format version, u32 kind, u64 payload size,
// payload, u32 CRC-32 over everything before it. Little-endian throughout.
enum class SnapshotKind : std::uint32_t { Configuration = 1, Ensemble = 2, Trajectory = 3 };

inline constexpr std::uint32_t kSnapshotVersion = 1;

std::vector<std::uint8_t> encode_snapshot(const MarkedConfiguration& g);
std::vector<std::uint8_t> encode_snapshot(const GibbsEnsemble& ens);
std::vector<std::uint8_t> encode_snapshot(const Trajectory& tr);

// Verifies magic, version and checksum; throws ChecksumMismatch / VersionUnsupported.
SnapshotKind snapshot_kind(std::span<const std::uint8_t> bytes);
MarkedConfiguration decode_configuration(std::span<const std::uint8_t> bytes);
GibbsEnsemble decode_ensemble(std::span<const std::uint8_t> bytes);
Trajectory decode_trajectory(std::span<const std::uint8_t> bytes);

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);

template <class T>
void persist_snapshot(const std::filesystem::path& path, const T& value) {
  write_bytes(path, encode_snapshot(value));
}

MarkedConfiguration load_configuration(const std::filesystem::path& path);
GibbsEnsemble load_ensemble(const std::filesystem::path& path);
Trajectory load_trajectory(const std::filesystem::path& path);

}  // namespace nvl
