#include "adrl/model/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <map>
#include <sstream>

namespace adrl {

namespace {

constexpr char kMagic[4] = {'A', 'D', 'R', 'L'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  template <typename T>
  void uint(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      out_.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
    }
  }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  void name(const std::string& s) {
    uint(static_cast<std::uint16_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}

  std::size_t offset() const { return pos_; }
  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) {
      throw CheckpointError(std::string("truncated checkpoint while reading ") + what, pos_);
    }
  }
  template <typename T>
  T uint(const char* what) {
    need(sizeof(T), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  double f64(const char* what) { return std::bit_cast<double>(uint<std::uint64_t>(what)); }
  std::string name(const char* what) {
    const auto len = uint<std::uint16_t>(what);
    need(len, what);
    std::string s = in_.substr(pos_, len);
    pos_ += len;
    return s;
  }
  std::string raw(std::size_t n, const char* what) {
    need(n, what);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == in_.size(); }

 private:
  const std::string& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const ModelParams& params) {
  params.validate();
  const ModelConfig& c = params.config;
  Writer w;
  w.bytes(kMagic, 4);
  w.uint(kCheckpointVersion);
  const std::vector<std::pair<std::string, std::int64_t>> fields = {
      {"n_layers", c.n_layers},
      {"n_heads", c.n_heads},
      {"d_model", c.d_model},
      {"d_ff", c.d_ff},
      {"vocab_size", c.vocab_size},
      {"max_seq_len", c.max_seq_len},
      {"parallel_residual", c.parallel_residual ? 1 : 0},
      {"rng_seed", static_cast<std::int64_t>(c.rng_seed)},
  };
  w.uint(static_cast<std::uint32_t>(fields.size()));
  for (const auto& [name, value] : fields) {
    w.name(name);
    w.uint(static_cast<std::uint64_t>(value));
  }
  std::uint32_t count = 0;
  params.for_each_tensor([&count](const std::string&, const Matrix&) { ++count; });
  w.uint(count);
  params.for_each_tensor([&w](const std::string& name, const Matrix& m) {
    w.name(name);
    w.uint(static_cast<std::uint32_t>(m.rows()));
    w.uint(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      w.f64(m.data()[i]);
    }
  });
  return w.take();
}

ModelParams deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.raw(4, "magic") != std::string(kMagic, 4)) {
    throw CheckpointError("bad checkpoint magic (expected \"ADRL\")", 0);
  }
  const std::size_t version_at = r.offset();
  const auto version = r.uint<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version), version_at);
  }

  std::map<std::string, std::int64_t> fields;
  const auto n_fields = r.uint<std::uint32_t>("config field count");
  for (std::uint32_t i = 0; i < n_fields; ++i) {
    std::string name = r.name("config field name");
    fields[name] = static_cast<std::int64_t>(r.uint<std::uint64_t>("config field value"));
  }
  auto field = [&](const std::string& name) -> std::int64_t {
    auto it = fields.find(name);
    if (it == fields.end()) {
      throw CheckpointError("checkpoint config is missing field '" + name + "'", r.offset());
    }
    return it->second;
  };
  ModelParams p;
  ModelConfig& c = p.config;
  c.n_layers = static_cast<int>(field("n_layers"));
  c.n_heads = static_cast<int>(field("n_heads"));
  c.d_model = static_cast<int>(field("d_model"));
  c.d_ff = static_cast<int>(field("d_ff"));
  c.vocab_size = static_cast<int>(field("vocab_size"));
  c.max_seq_len = static_cast<int>(field("max_seq_len"));
  c.parallel_residual = field("parallel_residual") != 0;
  c.rng_seed = static_cast<std::uint64_t>(field("rng_seed"));
  const std::size_t config_end = r.offset();
  try {
    c.validate();
  } catch (const Error& e) {
    throw CheckpointError(std::string("invalid checkpoint config: ") + e.what(), config_end);
  }
  if (c.n_layers > 4096 || c.d_model > (1 << 16) || c.d_ff > (1 << 18) || c.vocab_size > (1 << 22)) {
    throw CheckpointError("checkpoint config dimensions are implausibly large", config_end);
  }

  p.layers.resize(static_cast<std::size_t>(c.n_layers));
  std::vector<std::pair<std::string, Matrix*>> slots;
  p.for_each_tensor([&slots](const std::string& name, Matrix& m) { slots.emplace_back(name, &m); });

  const std::size_t count_at = r.offset();
  const auto n_tensors = r.uint<std::uint32_t>("tensor count");
  if (n_tensors != slots.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(n_tensors) + " tensors, config implies " +
                              std::to_string(slots.size()),
                          count_at);
  }
  for (const auto& [expected_name, slot] : slots) {
    const std::size_t header_at = r.offset();
    const std::string name = r.name("tensor name");
    if (name != expected_name) {
      throw CheckpointError("expected tensor '" + expected_name + "', found '" + name + "'", header_at);
    }
    const auto rows = r.uint<std::uint32_t>("tensor rows");
    const auto cols = r.uint<std::uint32_t>("tensor cols");
    const auto [er, ec] = ModelParams::expected_shape(c, name);
    if (rows != er || cols != ec) {
      throw CheckpointError("tensor '" + name + "' has shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                                " but config requires " + std::to_string(er) + "x" + std::to_string(ec),
                            header_at);
    }
    r.need(static_cast<std::size_t>(rows) * cols * 8, "tensor data");
    slot->resize(rows, cols);
    for (Eigen::Index i = 0; i < slot->size(); ++i) {
      slot->data()[i] = r.f64("tensor data");
    }
  }
  if (!r.at_end()) {
    throw CheckpointError("trailing bytes after last tensor", r.offset());
  }
  return p;
}

void save_checkpoint(const ModelParams& params, const std::string& path) {
  const std::string bytes = serialize_checkpoint(params);
  std::ofstream f(path, std::ios::binary);
  require(f.good(), "cannot open checkpoint for writing: " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(f.good(), "failed writing checkpoint: " + path);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "cannot open checkpoint: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace adrl
