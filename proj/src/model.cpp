#include "autofi/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace autofi::model {

std::vector<StageSpec> EncoderArch::stages() const {
  using K = StageSpec::Kind;
  return {
      {K::conv, "conv1", first_filters, first_kernel, first_stride},
      {K::conv, "conv2", 32, {3, 7}, {1, 1}},
      {K::pool, "pool1", 0, {1, 2}, {1, 2}},
      {K::conv, "conv3", 64, {3, 7}, {1, 1}},
      {K::conv, "conv4", 96, {3, 7}, {1, 1}},
      {K::pool, "pool2", 0, {1, 2}, {1, 2}},
  };
}

std::vector<Shape> EncoderArch::shape_chain() const {
  if (input.size() != 3) throw std::invalid_argument("encoder input must be [A,S,T], got " + shape_to_string(input));
  std::vector<Shape> chain{input};
  for (const StageSpec& s : stages()) {
    const Shape& in = chain.back();
    try {
      const std::size_t h = valid_extent(in[1], s.kernel.h, s.stride.h, "H");
      const std::size_t w = valid_extent(in[2], s.kernel.w, s.stride.w, "W");
      chain.push_back({s.kind == StageSpec::Kind::conv ? s.filters : in[0], h, w});
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("encoder stage " + s.name + " on " + shape_to_string(in) + ": " + e.what());
    }
  }
  return chain;
}

std::size_t EncoderArch::feature_dim() const { return shape_numel(shape_chain().back()); }

namespace {

Tensor glorot(Shape dims, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(dims));
  for (float& v : t.values()) v = static_cast<float>(dist(rng));
  return t;
}

void add_dense(ParamSet& p, const std::string& name, std::size_t out, std::size_t in, std::mt19937_64& rng) {
  p.add(name + ".weight", glorot({out, in}, in, out, rng));
  p.add(name + ".bias", Tensor({out}));
}

}  // namespace

ParamSet init_params(const EncoderArch& arch, std::uint64_t seed) {
  const auto chain = arch.shape_chain();
  std::mt19937_64 rng(seed);
  ParamSet p;
  p.add(kInputNorm, Tensor({2}, std::vector<float>{0.0f, 1.0f}), false);
  const auto stages = arch.stages();
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const StageSpec& s = stages[i];
    if (s.kind != StageSpec::Kind::conv) continue;
    const std::size_t channels = chain[i][0];
    const std::size_t area = s.kernel.h * s.kernel.w;
    p.add(s.name + ".weight", glorot({s.filters, channels, s.kernel.h, s.kernel.w}, channels * area, s.filters * area, rng));
    p.add(s.name + ".bias", Tensor({s.filters}));
  }
  return p;
}

ParamSet init_params(const ProjectorArch& arch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParamSet p;
  add_dense(p, "fc1", arch.hidden, arch.in_dim, rng);
  add_dense(p, "fc2", arch.out_dim, arch.hidden, rng);
  return p;
}

ParamSet init_params(const ClassifierArch& arch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParamSet p;
  add_dense(p, "embed", arch.embed, arch.in_dim, rng);
  add_dense(p, "out", arch.classes, arch.embed, rng);
  return p;
}

template <typename T>
BasicTensor<T> encode(const EncoderArch& arch, const BasicParamSet<T>& theta, const BasicTensor<T>& x,
                      EncoderTape<T>* tape) {
  if (x.dims() != arch.input) {
    throw std::invalid_argument("encoder expects input " + shape_to_string(arch.input) + ", got " +
                                shape_to_string(x.dims()));
  }
  BasicTensor<T> act = x;
  if (theta.contains(kInputNorm)) {
    const auto& norm = theta.get(kInputNorm);
    const T offset = norm[0], scale = norm[1];
    for (T& v : act.values()) v = (v - offset) * scale;
  }
  if (tape != nullptr) {
    tape->activations.clear();
    tape->argmax.clear();
  }
  for (const StageSpec& s : arch.stages()) {
    if (tape != nullptr) tape->activations.push_back(act);
    if (s.kind == StageSpec::Kind::conv) {
      act = conv2d(act, theta.get(s.name + ".weight"), theta.get(s.name + ".bias"), s.stride);
      relu_inplace(act);
    } else {
      PoolResult<T> r = maxpool2d(act, s.kernel, s.stride);
      act = std::move(r.output);
      if (tape != nullptr) tape->argmax.push_back(std::move(r.argmax));
    }
  }
  if (tape != nullptr) tape->activations.push_back(act);
  return std::move(act).reshaped({act.size()});
}

template <typename T>
BasicTensor<T> encode_backward(const EncoderArch& arch, const BasicParamSet<T>& theta, const EncoderTape<T>& tape,
                               const BasicTensor<T>& grad_feature, BasicParamSet<T>& grads, bool want_input) {
  const auto stages = arch.stages();
  if (tape.activations.size() != stages.size() + 1) throw std::invalid_argument("encode_backward: tape does not match arch");
  BasicTensor<T> grad = grad_feature.reshaped(tape.activations.back().dims());
  std::size_t pool_index = tape.argmax.size();
  for (std::size_t i = stages.size(); i-- > 0;) {
    const StageSpec& s = stages[i];
    const BasicTensor<T>& in = tape.activations[i];
    if (s.kind == StageSpec::Kind::conv) {
      relu_backward_inplace(tape.activations[i + 1], grad);
      const bool need_input = i > 0 || want_input;
      grad = conv2d_backward(in, theta.get(s.name + ".weight"), s.stride, grad, grads.values(s.name + ".weight"),
                             grads.values(s.name + ".bias"), need_input);
    } else {
      grad = maxpool2d_backward(in.dims(), tape.argmax[--pool_index], grad);
    }
  }
  return want_input ? grad : BasicTensor<T>{};
}

Tensor encode_batch(const EncoderArch& arch, const ParamSet& theta, const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("encode_batch: empty batch");
  const std::size_t dim = arch.feature_dim();
  Tensor out({xs.size(), dim});
  for (std::size_t b = 0; b < xs.size(); ++b) {
    const Tensor f = encode(arch, theta, xs[b]);
    std::copy(f.values().begin(), f.values().end(), out.data() + b * dim);
  }
  return out;
}

namespace {

template <typename T>
void check_features(const BasicTensor<T>& features, const BasicTensor<T>& first_weight, const char* net) {
  if (features.rank() != 2 || features.dim(1) != first_weight.dim(1)) {
    throw std::invalid_argument(std::string(net) + " expects features [B," + std::to_string(first_weight.dim(1)) +
                                "], got " + shape_to_string(features.dims()));
  }
}

// Dense backward accumulating straight into a ParamSet.
template <typename T>
BasicTensor<T> dense_backward_into(const BasicParamSet<T>& params, const std::string& name, const BasicTensor<T>& input,
                                   const BasicTensor<T>& grad_out, BasicParamSet<T>& grads) {
  return dense_rows_backward(input, params.get(name + ".weight"), grad_out, grads.values(name + ".weight"),
                             grads.values(name + ".bias"));
}

}  // namespace

template <typename T>
BasicTensor<T> project(const BasicParamSet<T>& phi, const BasicTensor<T>& features, MlpTape<T>* tape) {
  check_features(features, phi.get("fc1.weight"), "projector");
  BasicTensor<T> hidden = dense_rows(features, phi.get("fc1.weight"), phi.get("fc1.bias"));
  relu_inplace(hidden);
  BasicTensor<T> probs = softmax_rows(dense_rows(hidden, phi.get("fc2.weight"), phi.get("fc2.bias")));
  if (tape != nullptr) *tape = MlpTape<T>{features, hidden, probs};
  return probs;
}

template <typename T>
BasicTensor<T> project_backward(const BasicParamSet<T>& phi, const MlpTape<T>& tape, const BasicTensor<T>& grad_probs,
                                BasicParamSet<T>& grads) {
  const BasicTensor<T> g_logits = softmax_rows_backward(tape.probs, grad_probs);
  BasicTensor<T> g_hidden = dense_backward_into(phi, "fc2", tape.hidden, g_logits, grads);
  relu_backward_inplace(tape.hidden, g_hidden);
  return dense_backward_into(phi, "fc1", tape.input, g_hidden, grads);
}

template <typename T>
Classification<T> classify(const BasicParamSet<T>& psi, const BasicTensor<T>& features, MlpTape<T>* tape) {
  check_features(features, psi.get("embed.weight"), "classifier");
  BasicTensor<T> embedding = dense_rows(features, psi.get("embed.weight"), psi.get("embed.bias"));
  relu_inplace(embedding);
  BasicTensor<T> probs = softmax_rows(dense_rows(embedding, psi.get("out.weight"), psi.get("out.bias")));
  if (tape != nullptr) *tape = MlpTape<T>{features, embedding, probs};
  return {std::move(embedding), std::move(probs)};
}

template <typename T>
BasicTensor<T> classify_backward(const BasicParamSet<T>& psi, const MlpTape<T>& tape, const BasicTensor<T>& grad_embedding,
                                 const BasicTensor<T>& grad_probs, BasicParamSet<T>& grads) {
  BasicTensor<T> g_embed(tape.hidden.dims());
  if (!grad_probs.empty()) {
    const BasicTensor<T> g_logits = softmax_rows_backward(tape.probs, grad_probs);
    g_embed = dense_backward_into(psi, "out", tape.hidden, g_logits, grads);
  }
  if (!grad_embedding.empty()) {
    for (std::size_t i = 0; i < g_embed.size(); ++i) g_embed[i] += grad_embedding[i];
  }
  relu_backward_inplace(tape.hidden, g_embed);
  return dense_backward_into(psi, "embed", tape.input, g_embed, grads);
}

#define AUTOFI_INSTANTIATE_MODEL(T)                                                                                  \
  template BasicTensor<T> encode(const EncoderArch&, const BasicParamSet<T>&, const BasicTensor<T>&,                \
                                 EncoderTape<T>*);                                                                  \
  template BasicTensor<T> encode_backward(const EncoderArch&, const BasicParamSet<T>&, const EncoderTape<T>&,       \
                                          const BasicTensor<T>&, BasicParamSet<T>&, bool);                          \
  template BasicTensor<T> project(const BasicParamSet<T>&, const BasicTensor<T>&, MlpTape<T>*);                     \
  template BasicTensor<T> project_backward(const BasicParamSet<T>&, const MlpTape<T>&, const BasicTensor<T>&,       \
                                           BasicParamSet<T>&);                                                      \
  template Classification<T> classify(const BasicParamSet<T>&, const BasicTensor<T>&, MlpTape<T>*);                 \
  template BasicTensor<T> classify_backward(const BasicParamSet<T>&, const MlpTape<T>&, const BasicTensor<T>&,      \
                                            const BasicTensor<T>&, BasicParamSet<T>&);

AUTOFI_INSTANTIATE_MODEL(float)
AUTOFI_INSTANTIATE_MODEL(double)

#undef AUTOFI_INSTANTIATE_MODEL

// ---------------------------------------------------------------------------
// Checkpoint I/O

namespace {

void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u16(std::string& out, std::uint16_t v) {
  for (int i = 0; i < 2; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, sizeof bits);
  put_u32(out, bits);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint64_t take(std::size_t n, const char* what) {
    if (pos_ + n > bytes_.size()) {
      throw std::runtime_error(std::string("checkpoint truncated while reading ") + what + " at byte " +
                               std::to_string(pos_));
    }
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += n;
    return v;
  }

  std::string_view chunk(std::size_t n, const char* what) {
    if (pos_ + n > bytes_.size()) {
      throw std::runtime_error(std::string("checkpoint truncated while reading ") + what);
    }
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

bool is_buffer_name(std::string_view name) {
  auto starts = [&](std::string_view p) { return name.substr(0, p.size()) == p; };
  const std::string_view norm = kInputNorm;
  const bool ends_norm = name.size() >= norm.size() && name.substr(name.size() - norm.size()) == norm;
  return starts("arch.") || starts("protos.") || starts("opt.") || ends_norm;
}

std::string serialize_checkpoint(const ParamSet& params) {
  std::string out = "AFCK";
  put_u8(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params.entries()) {
    if (e.name.size() > 0xFFFF) throw std::invalid_argument("checkpoint entry name too long: " + e.name.substr(0, 64));
    put_u16(out, static_cast<std::uint16_t>(e.name.size()));
    out += e.name;
    put_u8(out, 0);
    put_u8(out, static_cast<std::uint8_t>(e.tensor.rank()));
    for (std::size_t d : e.tensor.dims()) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : e.tensor.values()) put_f32(out, v);
  }
  return out;
}

ParamSet deserialize_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.chunk(4, "magic") != "AFCK") throw std::runtime_error("bad magic: not an AFCK checkpoint");
  const auto version = r.take(1, "version");
  if (version != kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  const auto count = r.take(4, "entry count");
  ParamSet params;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = r.take(2, "name length");
    std::string name(r.chunk(name_len, "name"));
    const auto dtype = r.take(1, "dtype");
    if (dtype != 0) throw std::runtime_error("entry '" + name + "' has unsupported dtype " + std::to_string(dtype));
    const auto rank = r.take(1, "rank");
    if (rank == 0) throw std::runtime_error("entry '" + name + "' has rank 0");
    Shape dims;
    std::uint64_t numel = 1;
    for (std::uint64_t d = 0; d < rank; ++d) {
      const auto v = r.take(4, "dims");
      if (v == 0) throw std::runtime_error("entry '" + name + "' has a zero dimension");
      numel *= v;
      if (numel > (std::uint64_t{1} << 34)) throw std::runtime_error("entry '" + name + "': dim overflow");
      dims.push_back(static_cast<std::size_t>(v));
    }
    std::string_view payload = r.chunk(static_cast<std::size_t>(numel * 4), "payload");
    std::vector<float> values(static_cast<std::size_t>(numel));
    for (std::size_t k = 0; k < values.size(); ++k) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[4 * k + b])) << (8 * b);
      std::memcpy(&values[k], &bits, sizeof bits);
    }
    const bool trainable = !is_buffer_name(name);
    params.add(std::move(name), Tensor(std::move(dims), std::move(values)), trainable);
  }
  if (!r.done()) throw std::runtime_error("checkpoint has trailing bytes");
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params) {
  const std::string bytes = serialize_checkpoint(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

ParamSet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

Tensor arch_to_tensor(const EncoderArch& arch) {
  const auto& in = arch.input;
  return Tensor({8}, std::vector<float>{static_cast<float>(in.at(0)), static_cast<float>(in.at(1)),
                                        static_cast<float>(in.at(2)), static_cast<float>(arch.first_filters),
                                        static_cast<float>(arch.first_kernel.h), static_cast<float>(arch.first_kernel.w),
                                        static_cast<float>(arch.first_stride.h), static_cast<float>(arch.first_stride.w)});
}

EncoderArch encoder_arch_from_tensor(const Tensor& t) {
  if (t.dims() != Shape{8}) throw std::runtime_error("arch.encoder must hold 8 values, got " + shape_to_string(t.dims()));
  auto at = [&](std::size_t i) {
    const float v = t[i];
    if (!(v >= 1.0f) || v != std::floor(v)) throw std::runtime_error("arch.encoder holds a non-positive-integer value");
    return static_cast<std::size_t>(v);
  };
  EncoderArch arch;
  arch.input = {at(0), at(1), at(2)};
  arch.first_filters = at(3);
  arch.first_kernel = {at(4), at(5)};
  arch.first_stride = {at(6), at(7)};
  arch.shape_chain();
  return arch;
}

}  // namespace autofi::model
