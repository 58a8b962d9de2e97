#include "st5/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace st5 {

namespace {

class Writer {
 public:
  template <typename T>
  void put(T value) {
    char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    buf_.append(bytes, sizeof(T));
  }

  void put_str(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
  }

  void put_tensor_table(const ParameterStore& store) {
    put<std::uint32_t>(static_cast<std::uint32_t>(store.size()));
    for (std::size_t i = 0; i < store.size(); ++i) {
      put_str(store.name(i));
      const Tensor& t = store[i];
      put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
      for (Index d : t.shape()) put<std::uint64_t>(static_cast<std::uint64_t>(d));
      for (double x : t.flat()) put<double>(x);
    }
  }

  void raw(const char* data, std::size_t n) { buf_.append(data, n); }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::vector<char> data, std::string source) : data_(std::move(data)), source_(std::move(source)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    char bytes[sizeof(T)];
    std::memcpy(bytes, data_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
  }

  std::string get_str() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(data_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  ParameterStore get_tensor_table() {
    ParameterStore store;
    const auto count = get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
      std::string name = get_str();
      const auto rank = get<std::uint32_t>();
      if (rank > 8) throw CheckpointError(CheckpointError::Kind::ShapeMismatch, "tensor '" + name + "' has rank " + std::to_string(rank));
      Shape shape;
      for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<Index>(get<std::uint64_t>()));
      const auto n = static_cast<std::size_t>(shape_size(shape));
      need(n * sizeof(double));
      Tensor t(shape);
      for (double& x : t.flat()) x = get<double>();
      store.add(std::move(name), std::move(t));
    }
    return store;
  }

  bool starts_with(const char* magic, std::size_t n) const {
    return data_.size() >= n && std::memcmp(data_.data(), magic, n) == 0;
  }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) {
      throw CheckpointError(CheckpointError::Kind::Truncated,
                            source_ + ": truncated checkpoint (needed " + std::to_string(n) + " bytes at offset " +
                                std::to_string(pos_) + ")");
    }
  }

  std::vector<char> data_;
  std::size_t pos_ = 0;
  std::string source_;
};

void check_against(const ParameterStore& params, const ModelConfig& config, const std::string& what) {
  const auto specs = parameter_specs(config);
  const std::size_t n = std::max(specs.size(), params.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (i >= params.size()) {
      throw CheckpointError(CheckpointError::Kind::ShapeMismatch,
                            "shape mismatch: tensor '" + specs[i].name + "' expected by " + what + " is missing");
    }
    if (i >= specs.size()) {
      throw CheckpointError(CheckpointError::Kind::ShapeMismatch,
                            "shape mismatch: unexpected tensor '" + params.name(i) + "' for " + what);
    }
    if (params.name(i) != specs[i].name || params[i].shape() != specs[i].shape) {
      throw CheckpointError(CheckpointError::Kind::ShapeMismatch,
                            "shape mismatch: tensor '" + params.name(i) + "' " + shape_string(params[i].shape()) +
                                " but " + what + " expects '" + specs[i].name + "' " + shape_string(specs[i].shape));
    }
  }
}

}  // namespace

TrainState make_train_state(const ModelConfig& config, std::uint64_t init_seed, const OptimizerConfig& optimizer) {
  TrainState state;
  state.model = init_model(config, init_seed);
  state.optimizer = make_optimizer_state(optimizer, state.model.params);
  state.seed = init_seed;
  return state;
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  Writer w;
  w.raw(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.put<std::uint32_t>(kCheckpointVersion);

  const ModelConfig& c = state.model.config;
  w.put_str(to_string(c.size_preset));
  for (std::int64_t v : {c.vocab_size, c.d_model, c.n_heads, c.d_ff, c.n_layers_enc, c.n_layers_dec, c.max_seq_len,
                         c.embed_dim, c.rel_buckets, c.rel_max_distance}) {
    w.put<std::int64_t>(v);
  }
  w.put_tensor_table(state.model.params);

  const OptimizerConfig& oc = state.optimizer.config;
  w.put_str(to_string(oc.kind));
  for (double v : {oc.decay_exponent, oc.epsilon1, oc.clip_threshold, oc.beta1, oc.beta2, oc.adam_epsilon}) {
    w.put<double>(v);
  }
  w.put<std::int64_t>(state.optimizer.step);
  w.put_tensor_table(state.optimizer.slots);

  w.put<std::int64_t>(state.step);
  w.put<std::uint64_t>(state.seed);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void save_checkpoint(const EncoderDecoderModel& model, const OptimizerState& optimizer, std::int64_t step,
                     const std::filesystem::path& path) {
  save_checkpoint(path, TrainState{model, optimizer, step, 0});
}

TrainState load_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(bytes), path.string());

  if (!r.starts_with(kCheckpointMagic, sizeof(kCheckpointMagic))) {
    throw CheckpointError(CheckpointError::Kind::NotACheckpoint, path.string() + ": not a checkpoint");
  }
  r.skip(sizeof(kCheckpointMagic));
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointError::Kind::VersionMismatch,
                          path.string() + ": checkpoint format version " + std::to_string(version) +
                              " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }

  TrainState state;
  ModelConfig& c = state.model.config;
  try {
    c.size_preset = parse_size_preset(r.get_str());
  } catch (const ConfigError& e) {
    throw CheckpointError(CheckpointError::Kind::ShapeMismatch, path.string() + ": " + e.what());
  }
  for (std::int64_t* field : {&c.vocab_size, &c.d_model, &c.n_heads, &c.d_ff, &c.n_layers_enc, &c.n_layers_dec,
                              &c.max_seq_len, &c.embed_dim, &c.rel_buckets, &c.rel_max_distance}) {
    *field = r.get<std::int64_t>();
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(CheckpointError::Kind::ShapeMismatch, path.string() + ": invalid config: " + e.what());
  }
  state.model.params = r.get_tensor_table();
  check_against(state.model.params, c, "the checkpoint header");
  if (expected) check_against(state.model.params, *expected, "the expected config");

  OptimizerConfig& oc = state.optimizer.config;
  try {
    oc.kind = parse_optimizer_kind(r.get_str());
  } catch (const ConfigError& e) {
    throw CheckpointError(CheckpointError::Kind::ShapeMismatch, path.string() + ": " + e.what());
  }
  for (double* field : {&oc.decay_exponent, &oc.epsilon1, &oc.clip_threshold, &oc.beta1, &oc.beta2,
                        &oc.adam_epsilon}) {
    *field = r.get<double>();
  }
  state.optimizer.step = r.get<std::int64_t>();
  state.optimizer.slots = r.get_tensor_table();
  const OptimizerState fresh = make_optimizer_state(oc, state.model.params);
  if (fresh.slots.names() != state.optimizer.slots.names()) {
    throw CheckpointError(CheckpointError::Kind::ShapeMismatch,
                          path.string() + ": optimizer slots do not match the parameter table");
  }
  for (std::size_t i = 0; i < fresh.slots.size(); ++i) {
    if (fresh.slots[i].shape() != state.optimizer.slots[i].shape()) {
      throw CheckpointError(CheckpointError::Kind::ShapeMismatch,
                            path.string() + ": optimizer slot '" + fresh.slots.name(i) + "' has the wrong shape");
    }
  }
  state.step = r.get<std::int64_t>();
  state.seed = r.get<std::uint64_t>();
  return state;
}

}  // namespace st5
