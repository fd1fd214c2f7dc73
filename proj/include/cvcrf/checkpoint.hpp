#pragma once

// Single-file training state. All integers and floats little-endian.
//
//   char[8]  "CVCRFCK1"
//   u32      format version (1)
//   str      config text                      (str = u32 byte length + bytes)
//   u64      epoch of the stored state
//   u64      seed
//   -- centers --
//   u32 K, u32 d, f64[K*d] mu_long, f64[K*d] mu_trans
//   -- parameters --
//   u32 count, then per parameter: str name, u32 rank, u64[rank] dims, f64[numel] values
//   -- optimizer --
//   u64 steps, u32 count, per parameter: u64 n, f64[n] first moment, f64[n] second moment
//   -- memory bank --
//   u64 rows, u32 d, f64 alpha, f64 tau, per row: u64 sample index, i32 label,
//   then f64[rows*d] m_long, f64[rows*d] m_trans
//   -- rng --
//   u64 batch-order seed, u64 next epoch   (every stream is a pure function of these)
//   char[8]  "CVCRFEND"

#include <memory>
#include <string>

#include "cvcrf/memory_bank.hpp"
#include "cvcrf/trainer.hpp"

namespace cvcrf {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::string& path, const Trainer& trainer);

/// Rebuilds the trainer from the stored config, then overwrites parameters,
/// optimizer moments, bank and epoch.
std::unique_ptr<Trainer> read_checkpoint(const std::string& path);

/// Reads only the header and the centers section; enough for inference.
ClassCenters read_checkpoint_centers(const std::string& path);

/// Stored config text without loading anything else.
std::string read_checkpoint_config(const std::string& path);

}  // namespace cvcrf
