#include "prunekit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

namespace prunekit {

namespace {

constexpr char kMagic[4] = {'P', 'R', 'N', 'K'};
constexpr std::size_t kHeaderSize = 9;    // magic + version + kind
constexpr std::size_t kChecksumSize = 8;  // trailing u64
constexpr std::uint8_t kKindDense = 0;
constexpr std::uint8_t kKindSparse = 1;

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size) {
  std::uint64_t h = 14695981039346656037ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= data[i];
    h *= 1099511628211ULL;
  }
  return h;
}

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t>& bytes() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  void raw(std::uint8_t* out, std::size_t n) {
    need(n);
    std::memcpy(out, data_ + pos_, n);
    pos_ += n;
  }
  bool exhausted() const { return pos_ == size_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > size_) throw FormatError("truncated checkpoint payload");
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

void write_config(ByteWriter& w, const ModelConfig& c) {
  w.u32(static_cast<std::uint32_t>(c.vocab_size));
  w.u32(static_cast<std::uint32_t>(c.d_model));
  w.u32(static_cast<std::uint32_t>(c.n_heads));
  w.u32(static_cast<std::uint32_t>(c.n_layers));
  w.u32(static_cast<std::uint32_t>(c.d_ff));
  w.u32(static_cast<std::uint32_t>(c.context_len));
  w.u64(c.seed);
}

ModelConfig read_config(ByteReader& r) {
  ModelConfig c;
  c.vocab_size = static_cast<int>(r.u32());
  c.d_model = static_cast<int>(r.u32());
  c.n_heads = static_cast<int>(r.u32());
  c.n_layers = static_cast<int>(r.u32());
  c.d_ff = static_cast<int>(r.u32());
  c.context_len = static_cast<int>(r.u32());
  c.seed = r.u64();
  return c;
}

void write_tensor(ByteWriter& w, const std::string& name, const Tensor& t) {
  w.str(name);
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (int d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (double v : t.data()) w.f64(v);
}

std::vector<int> read_shape(ByteReader& r) {
  const std::uint32_t rank = r.u32();
  if (rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank));
  std::vector<int> shape(rank);
  for (std::uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int>(r.u32());
  return shape;
}

// keep bits pack LSB-first into bytes.
void write_mask_entry(ByteWriter& w, const std::string& name, const PruningMask::Entry& e) {
  w.str(name);
  w.u32(static_cast<std::uint32_t>(e.shape.size()));
  for (int d : e.shape) w.u32(static_cast<std::uint32_t>(d));
  const std::size_t n_bytes = (e.keep.size() + 7) / 8;
  std::vector<std::uint8_t> packed(n_bytes, 0);
  for (std::size_t i = 0; i < e.keep.size(); ++i) {
    if (e.keep[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  for (std::uint8_t b : packed) w.u8(b);
}

PruningMask::Entry read_mask_entry(ByteReader& r) {
  PruningMask::Entry e;
  e.shape = read_shape(r);
  const std::size_t n = shape_numel(e.shape);
  const std::size_t n_bytes = (n + 7) / 8;
  std::vector<std::uint8_t> packed(n_bytes);
  r.raw(packed.data(), n_bytes);
  e.keep.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    e.keep[i] = (packed[i / 8] >> (i % 8)) & 1u;
  }
  return e;
}

std::vector<std::uint8_t> serialize_dense(const TransformerModel& model,
                                          const PruningMask* mask) {
  ByteWriter payload;
  write_config(payload, model.config());
  const auto named = model.named_parameters();
  payload.u32(static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, t] : named) write_tensor(payload, name, t);
  payload.u8(mask != nullptr ? 1 : 0);
  if (mask != nullptr) {
    mask->require_match(model);
    payload.u32(static_cast<std::uint32_t>(mask->entries().size()));
    for (const auto& [name, e] : mask->entries()) write_mask_entry(payload, name, e);
  }

  ByteWriter file;
  for (char c : kMagic) file.u8(static_cast<std::uint8_t>(c));
  file.u32(kCheckpointVersion);
  file.u8(kKindDense);
  auto& bytes = file.bytes();
  bytes.insert(bytes.end(), payload.bytes().begin(), payload.bytes().end());
  file.u64(fnv1a64(payload.bytes().data(), payload.bytes().size()));
  return std::move(bytes);
}

std::vector<std::uint8_t> serialize_sparse(const TransformerModel& model,
                                           const PruningMask& mask) {
  mask.require_match(model);
  std::set<std::string> prunable_names;
  for (const auto& [name, t] : model.prunable_parameters()) prunable_names.insert(name);

  ByteWriter payload;
  write_config(payload, model.config());

  std::uint32_t n_dense = 0;
  for (const auto& [name, t] : model.named_parameters()) {
    if (!prunable_names.count(name)) ++n_dense;
  }
  payload.u32(n_dense);
  for (const auto& [name, t] : model.named_parameters()) {
    if (!prunable_names.count(name)) write_tensor(payload, name, t);
  }

  const auto prunable = model.prunable_parameters();
  payload.u32(static_cast<std::uint32_t>(prunable.size()));
  for (const auto& [name, t] : prunable) {
    const auto& keep = mask.entry(name).keep;
    const auto& data = t.data();
    const std::size_t rows = static_cast<std::size_t>(t.dim(0));
    const std::size_t cols = static_cast<std::size_t>(t.dim(1));
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (!keep[i] && data[i] != 0.0) {
        throw ContractError("export_sparse: '" + name + "' holds a nonzero value at pruned" +
                            " position " + std::to_string(i) + "; apply the mask first");
      }
    }
    std::uint32_t nnz = 0;
    for (std::uint8_t k : keep) nnz += k;
    payload.str(name);
    payload.u32(static_cast<std::uint32_t>(rows));
    payload.u32(static_cast<std::uint32_t>(cols));
    payload.u32(nnz);
    // row_ptr, then col_idx, then values: the usual three-array CSR.
    std::uint32_t running = 0;
    payload.u32(0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) running += keep[r * cols + c];
      payload.u32(running);
    }
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        if (keep[r * cols + c]) payload.u32(static_cast<std::uint32_t>(c));
      }
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (keep[i]) payload.f64(data[i]);
    }
  }

  ByteWriter file;
  for (char c : kMagic) file.u8(static_cast<std::uint8_t>(c));
  file.u32(kCheckpointVersion);
  file.u8(kKindSparse);
  auto& bytes = file.bytes();
  bytes.insert(bytes.end(), payload.bytes().begin(), payload.bytes().end());
  file.u64(fnv1a64(payload.bytes().data(), payload.bytes().size()));
  return std::move(bytes);
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("failed while writing '" + path + "'");
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw IoError("cannot open '" + path + "' for reading");
  const std::streamsize size = is.tellg();
  is.seekg(0);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
  if (size > 0) {
    is.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!is) throw IoError("failed while reading '" + path + "'");
  }
  return bytes;
}

// Shared header validation; returns a reader positioned at the payload.
ByteReader open_payload(const std::vector<std::uint8_t>& bytes, std::uint8_t expected_kind,
                        const char* expected_desc) {
  if (bytes.empty()) throw FormatError("empty checkpoint file");
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("bad magic; not a checkpoint file");
  }
  if (bytes.size() < kHeaderSize + kChecksumSize) throw FormatError("truncated checkpoint");
  ByteReader header(bytes.data() + 4, 5);
  const std::uint32_t version = header.u32();
  if (version != kCheckpointVersion) {
    throw VersionError("unsupported checkpoint version " + std::to_string(version) +
                       "; this build reads version " + std::to_string(kCheckpointVersion));
  }
  const std::uint8_t kind = header.u8();
  if (kind != kKindDense && kind != kKindSparse) {
    throw FormatError("unknown checkpoint kind " + std::to_string(kind));
  }
  const std::size_t payload_size = bytes.size() - kHeaderSize - kChecksumSize;
  ByteReader tail(bytes.data() + kHeaderSize + payload_size, kChecksumSize);
  if (tail.u64() != fnv1a64(bytes.data() + kHeaderSize, payload_size)) {
    throw CorruptionError("checkpoint checksum mismatch");
  }
  if (kind != expected_kind) {
    throw FormatError(std::string("checkpoint is not ") + expected_desc +
                      " (kind " + std::to_string(kind) + ")");
  }
  return ByteReader(bytes.data() + kHeaderSize, payload_size);
}

}  // namespace

std::size_t save_checkpoint(const TransformerModel& model, const std::string& path,
                            const PruningMask* mask) {
  const auto bytes = serialize_dense(model, mask);
  write_file(path, bytes);
  return bytes.size();
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  const auto bytes = read_file(path);
  ByteReader r = open_payload(bytes, kKindDense, "a dense checkpoint");

  const ModelConfig config = read_config(r);
  config.validate();
  TransformerModel model = TransformerModel::uninitialized(config);

  std::map<std::string, Tensor> expected;
  for (const auto& [name, t] : model.named_parameters()) expected.emplace(name, t);
  const std::uint32_t n_tensors = r.u32();
  if (n_tensors != expected.size()) {
    throw FormatError("checkpoint holds " + std::to_string(n_tensors) + " tensors, expected " +
                      std::to_string(expected.size()));
  }
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    const std::string name = r.str();
    auto it = expected.find(name);
    if (it == expected.end()) throw FormatError("unexpected tensor '" + name + "'");
    if (!seen.insert(name).second) throw FormatError("duplicate tensor '" + name + "'");
    const std::vector<int> shape = read_shape(r);
    if (shape != it->second.shape()) {
      throw FormatError("tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                        shape_str(it->second.shape()));
    }
    auto& data = it->second.data();
    for (double& v : data) v = r.f64();
  }

  LoadedCheckpoint out{std::move(model), std::nullopt};
  if (r.u8() != 0) {
    PruningMask mask;
    const std::uint32_t n_entries = r.u32();
    for (std::uint32_t i = 0; i < n_entries; ++i) {
      std::string name = r.str();
      mask.insert(std::move(name), read_mask_entry(r));
    }
    if (!mask.matches(out.model)) {
      throw FormatError("mask section does not match the model's prunable parameters");
    }
    out.mask = std::move(mask);
  }
  if (!r.exhausted()) throw FormatError("trailing bytes after checkpoint payload");
  return out;
}

SparseExportResult export_sparse(const TransformerModel& model, const PruningMask& mask,
                                 const std::string& path) {
  const auto sparse_bytes = serialize_sparse(model, mask);
  write_file(path, sparse_bytes);
  SparseExportResult result;
  result.sparse_bytes = sparse_bytes.size();
  result.dense_bytes = serialize_dense(model, nullptr).size();
  result.compression_ratio =
      static_cast<double>(result.dense_bytes) / static_cast<double>(result.sparse_bytes);
  return result;
}

LoadedCheckpoint import_sparse(const std::string& path) {
  const auto bytes = read_file(path);
  ByteReader r = open_payload(bytes, kKindSparse, "a sparse checkpoint");

  const ModelConfig config = read_config(r);
  config.validate();
  TransformerModel model = TransformerModel::uninitialized(config);

  std::set<std::string> prunable_names;
  for (const auto& [name, t] : model.prunable_parameters()) prunable_names.insert(name);
  std::map<std::string, Tensor> expected_dense;
  for (const auto& [name, t] : model.named_parameters()) {
    if (!prunable_names.count(name)) expected_dense.emplace(name, t);
  }

  const std::uint32_t n_dense = r.u32();
  if (n_dense != expected_dense.size()) {
    throw FormatError("sparse checkpoint holds " + std::to_string(n_dense) +
                      " dense tensors, expected " + std::to_string(expected_dense.size()));
  }
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < n_dense; ++i) {
    const std::string name = r.str();
    auto it = expected_dense.find(name);
    if (it == expected_dense.end()) throw FormatError("unexpected dense tensor '" + name + "'");
    if (!seen.insert(name).second) throw FormatError("duplicate tensor '" + name + "'");
    const std::vector<int> shape = read_shape(r);
    if (shape != it->second.shape()) {
      throw FormatError("tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                        shape_str(it->second.shape()));
    }
    for (double& v : it->second.data()) v = r.f64();
  }

  std::map<std::string, Tensor> expected_sparse;
  for (const auto& [name, t] : model.prunable_parameters()) expected_sparse.emplace(name, t);
  const std::uint32_t n_sparse = r.u32();
  if (n_sparse != expected_sparse.size()) {
    throw FormatError("sparse checkpoint holds " + std::to_string(n_sparse) +
                      " CSR matrices, expected " + std::to_string(expected_sparse.size()));
  }
  PruningMask mask;
  for (std::uint32_t i = 0; i < n_sparse; ++i) {
    const std::string name = r.str();
    auto it = expected_sparse.find(name);
    if (it == expected_sparse.end()) throw FormatError("unexpected CSR matrix '" + name + "'");
    if (!seen.insert(name).second) throw FormatError("duplicate tensor '" + name + "'");
    const std::size_t rows = r.u32();
    const std::size_t cols = r.u32();
    const std::vector<int> shape = {static_cast<int>(rows), static_cast<int>(cols)};
    if (shape != it->second.shape()) {
      throw FormatError("CSR matrix '" + name + "' has shape " + shape_str(shape) +
                        ", expected " + shape_str(it->second.shape()));
    }
    const std::uint32_t nnz = r.u32();
    std::vector<std::uint32_t> row_ptr(rows + 1);
    for (auto& v : row_ptr) v = r.u32();
    if (row_ptr[0] != 0) throw FormatError("CSR '" + name + "': row_ptr[0] must be 0");
    for (std::size_t j = 1; j <= rows; ++j) {
      if (row_ptr[j] < row_ptr[j - 1]) {
        throw FormatError("CSR '" + name + "': row_ptr must be non-decreasing");
      }
    }
    if (row_ptr[rows] != nnz) {
      throw FormatError("CSR '" + name + "': row_ptr[rows] (" + std::to_string(row_ptr[rows]) +
                        ") does not equal nnz (" + std::to_string(nnz) + ")");
    }
    std::vector<std::uint32_t> col_idx(nnz);
    for (auto& v : col_idx) v = r.u32();

    auto& data = it->second.data();
    std::fill(data.begin(), data.end(), 0.0);
    PruningMask::Entry entry{shape, std::vector<std::uint8_t>(rows * cols, 0)};
    for (std::size_t row = 0; row < rows; ++row) {
      for (std::uint32_t j = row_ptr[row]; j < row_ptr[row + 1]; ++j) {
        const std::uint32_t c = col_idx[j];
        if (c >= cols) {
          throw FormatError("CSR '" + name + "': column index " + std::to_string(c) +
                            " out of range");
        }
        if (j > row_ptr[row] && col_idx[j - 1] >= c) {
          throw FormatError("CSR '" + name + "': column indices must be strictly increasing " +
                            "within a row");
        }
        entry.keep[row * cols + c] = 1;
      }
    }
    for (std::size_t row = 0; row < rows; ++row) {
      for (std::uint32_t j = row_ptr[row]; j < row_ptr[row + 1]; ++j) {
        data[row * cols + col_idx[j]] = r.f64();
      }
    }
    mask.insert(name, std::move(entry));
  }
  if (!r.exhausted()) throw FormatError("trailing bytes after checkpoint payload");

  LoadedCheckpoint out{std::move(model), std::move(mask)};
  return out;
}

}  // namespace prunekit
