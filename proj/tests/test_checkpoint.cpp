#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "prunekit/checkpoint.hpp"
#include "prunekit/pruning.hpp"

using namespace prunekit;
namespace fs = std::filesystem;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.vocab_size = 8;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 2;
  c.d_ff = 16;
  c.context_len = 8;
  c.seed = 33;
  return c;
}

fs::path scratch_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "prunekit_ckpt_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<std::uint8_t> slurp(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(is),
                                   std::istreambuf_iterator<char>());
}

void spit(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  REQUIRE(os.good());
  if (!bytes.empty()) {
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
  }
}

std::uint32_t rd_u32(const std::vector<std::uint8_t>& b, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[off + i]) << (8 * i);
  return v;
}

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size) {
  std::uint64_t h = 14695981039346656037ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= data[i];
    h *= 1099511628211ULL;
  }
  return h;
}

// Recomputes the trailing payload hash after a deliberate payload edit.
void refresh_checksum(std::vector<std::uint8_t>& bytes) {
  const std::size_t payload_size = bytes.size() - 9 - 8;
  const std::uint64_t h = fnv1a64(bytes.data() + 9, payload_size);
  for (int i = 0; i < 8; ++i) {
    bytes[bytes.size() - 8 + static_cast<std::size_t>(i)] =
        static_cast<std::uint8_t>(h >> (8 * i));
  }
}

void check_same_weights(const TransformerModel& a, const TransformerModel& b) {
  for (const auto& [name, t] : a.named_parameters()) {
    CHECK(t.data() == b.parameter(name).data());
  }
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("dense checkpoints round trip bit for bit") {
  TransformerModel model(small_config());
  const PruningMask mask = build_mask(model, 0.4, PruneScope::kGlobal);
  const fs::path path = scratch_file("dense_mask.prnk");

  const std::size_t written = save_checkpoint(model, path.string(), &mask);
  CHECK(written == fs::file_size(path));

  const LoadedCheckpoint loaded = load_checkpoint(path.string());
  CHECK(loaded.model.config() == model.config());
  check_same_weights(model, loaded.model);
  REQUIRE(loaded.mask.has_value());
  CHECK(*loaded.mask == mask);
}

TEST_CASE("a maskless checkpoint loads with no mask") {
  TransformerModel model(small_config());
  const fs::path path = scratch_file("dense_nomask.prnk");
  save_checkpoint(model, path.string());
  const LoadedCheckpoint loaded = load_checkpoint(path.string());
  CHECK_FALSE(loaded.mask.has_value());
  check_same_weights(model, loaded.model);
}

TEST_CASE("saving the same model twice produces identical bytes") {
  TransformerModel model(small_config());
  const fs::path p1 = scratch_file("dup1.prnk");
  const fs::path p2 = scratch_file("dup2.prnk");
  save_checkpoint(model, p1.string());
  save_checkpoint(model, p2.string());
  CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("sparse checkpoints round trip a masked model exactly") {
  TransformerModel model(small_config());
  const PruningMask mask = build_mask(model, 0.9, PruneScope::kGlobal);
  apply_mask(model, mask);
  const fs::path path = scratch_file("sparse.prnk");

  const SparseExportResult res = export_sparse(model, mask, path.string());
  CHECK(res.sparse_bytes == fs::file_size(path));
  CHECK(res.compression_ratio ==
        static_cast<double>(res.dense_bytes) / static_cast<double>(res.sparse_bytes));
  CHECK(res.compression_ratio > 1.5);  // 90% of the prunable weights are gone

  const LoadedCheckpoint loaded = import_sparse(path.string());
  CHECK(loaded.model.config() == model.config());
  check_same_weights(model, loaded.model);
  REQUIRE(loaded.mask.has_value());
  CHECK(*loaded.mask == mask);
  CHECK(mask_is_applied(loaded.model, *loaded.mask));
}

TEST_CASE("export refuses a model whose pruned weights were not zeroed") {
  TransformerModel model(small_config());
  const PruningMask mask = build_mask(model, 0.5, PruneScope::kGlobal);
  // No apply_mask: pruned positions still hold their old nonzero values.
  const fs::path path = scratch_file("unapplied.prnk");
  CHECK_THROWS_AS((void)export_sparse(model, mask, path.string()), ContractError);
  // An all-keep mask has nothing to violate.
  const PruningMask keep_all = PruningMask::all_kept(model);
  (void)export_sparse(model, keep_all, path.string());
}

TEST_CASE("io failures surface as IoError") {
  CHECK_THROWS_AS((void)load_checkpoint("/nonexistent/dir/x.prnk"), IoError);
  CHECK_THROWS_AS((void)import_sparse("/nonexistent/dir/x.prnk"), IoError);
  TransformerModel model(small_config());
  CHECK_THROWS_AS((void)save_checkpoint(model, "/nonexistent/dir/x.prnk"), IoError);
}

TEST_CASE("header and payload corruption are told apart") {
  TransformerModel model(small_config());
  const fs::path path = scratch_file("victim.prnk");
  save_checkpoint(model, path.string());
  const std::vector<std::uint8_t> original = slurp(path);

  auto reload_with = [&](std::vector<std::uint8_t> bytes) {
    const fs::path p = scratch_file("mutant.prnk");
    spit(p, bytes);
    return p.string();
  };

  SUBCASE("empty file") {
    CHECK_THROWS_AS((void)load_checkpoint(reload_with({})), FormatError);
  }
  SUBCASE("bad magic") {
    auto bytes = original;
    bytes[0] ^= 0xFF;
    CHECK_THROWS_AS((void)load_checkpoint(reload_with(bytes)), FormatError);
  }
  SUBCASE("unsupported version") {
    // The checksum covers only the payload, so a version bump alone is
    // detected as a version problem rather than corruption.
    auto bytes = original;
    bytes[4] = 2;
    CHECK_THROWS_AS((void)load_checkpoint(reload_with(bytes)), VersionError);
  }
  SUBCASE("unknown kind byte") {
    auto bytes = original;
    bytes[8] = 7;
    CHECK_THROWS_AS((void)load_checkpoint(reload_with(bytes)), FormatError);
  }
  SUBCASE("flipped payload byte") {
    auto bytes = original;
    bytes[9 + bytes.size() / 2] ^= 0x01;
    CHECK_THROWS_AS((void)load_checkpoint(reload_with(bytes)), CorruptionError);
  }
  SUBCASE("header-only file") {
    auto bytes = original;
    bytes.resize(10);
    CHECK_THROWS_AS((void)load_checkpoint(reload_with(bytes)), FormatError);
  }
  SUBCASE("truncated payload") {
    auto bytes = original;
    bytes.resize(bytes.size() - 24);
    CHECK_THROWS_AS((void)load_checkpoint(reload_with(bytes)), CorruptionError);
  }
}

TEST_CASE("kind mismatches are format errors") {
  TransformerModel model(small_config());
  const PruningMask mask = build_mask(model, 0.5, PruneScope::kGlobal);
  apply_mask(model, mask);
  const fs::path dense_path = scratch_file("kind_dense.prnk");
  const fs::path sparse_path = scratch_file("kind_sparse.prnk");
  save_checkpoint(model, dense_path.string(), &mask);
  export_sparse(model, mask, sparse_path.string());

  CHECK_THROWS_AS((void)load_checkpoint(sparse_path.string()), FormatError);
  CHECK_THROWS_AS((void)import_sparse(dense_path.string()), FormatError);
}

TEST_CASE("violated CSR invariants are rejected") {
  TransformerModel model(small_config());
  const PruningMask mask = build_mask(model, 0.5, PruneScope::kGlobal);
  apply_mask(model, mask);
  const fs::path path = scratch_file("csr.prnk");
  export_sparse(model, mask, path.string());
  std::vector<std::uint8_t> bytes = slurp(path);

  // Walk the payload to the first CSR matrix: config, dense tensor block,
  // matrix count, then name/rows/cols/nnz/row_ptr/col_idx.
  std::size_t off = 9;
  off += 6 * 4 + 8;  // model config
  const std::uint32_t n_dense = rd_u32(bytes, off);
  off += 4;
  for (std::uint32_t i = 0; i < n_dense; ++i) {
    off += 4 + rd_u32(bytes, off);  // name
    const std::uint32_t rank = rd_u32(bytes, off);
    off += 4;
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      numel *= rd_u32(bytes, off);
      off += 4;
    }
    off += numel * 8;
  }
  REQUIRE(rd_u32(bytes, off) > 0);  // at least one CSR matrix follows
  off += 4;
  off += 4 + rd_u32(bytes, off);  // name
  const std::uint32_t rows = rd_u32(bytes, off);
  off += 8;  // rows, cols
  off += 4;  // nnz
  const std::size_t row_ptr_off = off;
  const std::size_t col_idx_off = row_ptr_off + (rows + 1) * 4;

  // Find a row holding at least two entries and swap its first two column
  // indices, breaking the strictly-increasing invariant.
  std::size_t swap_at = 0;
  for (std::uint32_t r = 0; r < rows; ++r) {
    const std::uint32_t lo = rd_u32(bytes, row_ptr_off + r * 4);
    const std::uint32_t hi = rd_u32(bytes, row_ptr_off + (r + 1) * 4);
    if (hi - lo >= 2) {
      swap_at = col_idx_off + lo * 4;
      break;
    }
  }
  REQUIRE(swap_at != 0);
  for (int i = 0; i < 4; ++i) std::swap(bytes[swap_at + i], bytes[swap_at + 4 + i]);
  refresh_checksum(bytes);  // keep the checksum valid so only the CSR check fires

  const fs::path bad = scratch_file("csr_bad.prnk");
  spit(bad, bytes);
  CHECK_THROWS_AS((void)import_sparse(bad.string()), FormatError);
}

}  // TEST_SUITE
