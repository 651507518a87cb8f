#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "prunekit/model.hpp"
#include "prunekit/pruning.hpp"

namespace prunekit {

// Binary checkpoint container. Layout, all little-endian:
//
//   bytes 0..3   magic "PRNK"
//   bytes 4..7   u32 format version (currently 1)
//   byte  8      u8 kind: 0 = dense tensors, 1 = sparse (CSR) tensors
//   bytes 9..N-9 payload
//   last 8 bytes u64 FNV-1a hash of the payload bytes
//
// The dense payload is the model config, every named tensor (length-prefixed
// name, shape, raw f64 data), and an optional bit-packed pruning mask. The
// sparse payload stores non-prunable tensors densely and each prunable matrix
// in CSR form (row_ptr, col_idx, values); the mask is implicit in the
// structure. Both payloads round-trip weights bit for bit.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct LoadedCheckpoint {
  TransformerModel model;
  std::optional<PruningMask> mask;
};

// Writes a dense checkpoint, with the mask section when a mask is given.
// Returns the file size in bytes. IoError when the file cannot be written.
std::size_t save_checkpoint(const TransformerModel& model, const std::string& path,
                            const PruningMask* mask = nullptr);

// Reads a dense checkpoint written by save_checkpoint. FormatError for
// malformed or truncated files (including an empty file and a bad magic),
// VersionError for an unsupported version, CorruptionError when the checksum
// does not match, IoError when the file cannot be read.
LoadedCheckpoint load_checkpoint(const std::string& path);

struct SparseExportResult {
  std::size_t sparse_bytes = 0;
  // Size the same model takes as a dense checkpoint (without mask section).
  std::size_t dense_bytes = 0;
  double compression_ratio = 0.0;  // dense_bytes / sparse_bytes
};

// Writes a sparse checkpoint of a masked model. The mask must match the
// model, and every pruned position must already hold exactly 0.0
// (ContractError otherwise — apply_mask first).
SparseExportResult export_sparse(const TransformerModel& model, const PruningMask& mask,
                                 const std::string& path);

// Reads a sparse checkpoint back into a dense model plus its mask (always
// present). Pruned positions come back as exact zeros; surviving weights are
// bit-identical to what was exported. Same error contract as
// load_checkpoint, plus FormatError for violated CSR invariants.
LoadedCheckpoint import_sparse(const std::string& path);

}  // namespace prunekit
