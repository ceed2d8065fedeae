#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "autofi/gradcheck.hpp"
#include "autofi/model.hpp"

using namespace autofi;
using namespace autofi::model;

namespace {

template <typename T>
BasicTensor<T> random_tensor(Shape dims, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  BasicTensor<T> t(std::move(dims));
  std::uniform_real_distribution<double> u(lo, hi);
  for (T& x : t.values()) x = static_cast<T>(u(rng));
  return t;
}

EncoderArch small_arch() {
  EncoderArch a;
  a.input = {3, 21, 72};
  a.first_filters = 8;
  a.first_kernel = {3, 5};
  a.first_stride = {3, 2};
  return a;
}

std::string expect_throw_message(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  ADD_FAILURE() << "no exception";
  return {};
}

}  // namespace

TEST(EncoderArch, FullSizeShapeChain) {
  const EncoderArch arch;
  const std::vector<Shape> want{{3, 114, 500}, {32, 12, 54}, {32, 10, 48}, {32, 10, 24},
                                {64, 8, 18},   {96, 6, 12},  {96, 6, 6}};
  EXPECT_EQ(arch.shape_chain(), want);
  EXPECT_EQ(arch.feature_dim(), 3456u);
}

TEST(EncoderArch, TooSmallInputNamesStage) {
  EncoderArch arch;
  arch.input = {3, 33, 500};
  const std::string msg = expect_throw_message([&] { arch.shape_chain(); });
  EXPECT_NE(msg.find("conv3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("H"), std::string::npos) << msg;
}

TEST(EncoderArch, CheckpointTensorRoundTrip) {
  const EncoderArch a = small_arch();
  EXPECT_EQ(encoder_arch_from_tensor(arch_to_tensor(a)), a);
  Tensor bad = arch_to_tensor(a);
  bad[3] = 0.5f;
  EXPECT_THROW(encoder_arch_from_tensor(bad), std::runtime_error);
}

TEST(Init, DeterministicShapesAndZeroBiases) {
  const EncoderArch arch;
  const ParamSet a = init_params(arch, 42), b = init_params(arch, 42), c = init_params(arch, 43);
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a == c);
  EXPECT_EQ(a.get("conv1.weight").dims(), (Shape{32, 3, 15, 23}));
  EXPECT_EQ(a.get("conv4.weight").dims(), (Shape{96, 64, 3, 7}));
  EXPECT_FALSE(a.trainable(kInputNorm));
  for (const auto& e : a.entries()) {
    if (e.name.ends_with(".bias")) {
      for (float v : e.tensor.values()) EXPECT_EQ(v, 0.0f) << e.name;
    }
  }
  const ParamSet phi = init_params(ProjectorArch{}, 1);
  EXPECT_EQ(phi.get("fc2.weight").dims(), (Shape{32, 256}));
  const ParamSet psi = init_params(ClassifierArch{3456, 128, 4}, 1);
  EXPECT_EQ(psi.get("out.weight").dims(), (Shape{4, 128}));
}

TEST(Init, GlorotBound) {
  const ParamSet p = init_params(ProjectorArch{100, 50, 10}, 3);
  const double bound = std::sqrt(6.0 / 150.0);
  double max_abs = 0.0;
  for (float v : p.get("fc1.weight").values()) max_abs = std::max(max_abs, double(std::abs(v)));
  EXPECT_LE(max_abs, bound);
  EXPECT_GT(max_abs, 0.9 * bound);
}

TEST(Encode, ZeroInputGivesZeroFeature) {
  const EncoderArch arch;
  const Tensor f = encode(arch, init_params(arch, 1), Tensor(arch.input));
  EXPECT_EQ(f.dims(), (Shape{3456}));
  for (float v : f.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Encode, RejectsWrongInputShape) {
  const EncoderArch arch = small_arch();
  const std::string msg = expect_throw_message([&] { encode(arch, init_params(arch, 1), Tensor({3, 21, 71})); });
  EXPECT_NE(msg.find("[3x21x72]"), std::string::npos) << msg;
}

TEST(Encode, BatchPreservesOrder) {
  std::mt19937_64 rng(2);
  const EncoderArch arch = small_arch();
  const ParamSet theta = init_params(arch, 3);
  std::vector<Tensor> xs;
  for (int i = 0; i < 4; ++i) xs.push_back(random_tensor<float>(arch.input, rng));
  const Tensor batch = encode_batch(arch, theta, xs);
  ASSERT_EQ(batch.dims(), (Shape{4, arch.feature_dim()}));
  for (std::size_t b = 0; b < 4; ++b) {
    const Tensor f = encode(arch, theta, xs[b]);
    for (std::size_t j = 0; j < f.size(); ++j) ASSERT_EQ(batch.at(b, j), f[j]);
  }
}

TEST(Encode, InputNormIsApplied) {
  std::mt19937_64 rng(4);
  const EncoderArch arch = small_arch();
  ParamSet theta = init_params(arch, 5);
  const Tensor x = random_tensor<float>(arch.input, rng, 10, 50);
  Tensor shifted = x;
  for (float& v : shifted.values()) v = (v - 30.0f) * 0.1f;
  const Tensor want = encode(arch, theta, shifted);
  theta.assign(kInputNorm, Tensor({2}, std::vector<float>{30.0f, 0.1f}));
  const Tensor got = encode(arch, theta, x);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-5f);
}

TEST(Projector, RowsAreDistributions) {
  std::mt19937_64 rng(5);
  const ParamSet phi = init_params(ProjectorArch{20, 16, 8}, 6);
  const Tensor p = project(phi, random_tensor<float>({5, 20}, rng, -3, 3));
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 8; ++j) s += p.at(i, j);
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
  ParamSet zero = phi;
  zero.assign("fc2.weight", Tensor({8, 16}));
  const Tensor flat = project(zero, random_tensor<float>({2, 20}, rng));
  for (float v : flat.values()) EXPECT_NEAR(v, 0.125f, 1e-7f);
  EXPECT_THROW(project(phi, Tensor({2, 19})), std::invalid_argument);
}

TEST(Classifier, EmbeddingIsNonNegativeAndProbsSumToOne) {
  std::mt19937_64 rng(6);
  const ParamSet psi = init_params(ClassifierArch{20, 12, 3}, 7);
  const auto c = classify(psi, random_tensor<float>({4, 20}, rng, -2, 2));
  EXPECT_EQ(c.embedding.dims(), (Shape{4, 12}));
  for (float v : c.embedding.values()) EXPECT_GE(v, 0.0f);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(c.probs.at(i, 0) + c.probs.at(i, 1) + c.probs.at(i, 2), 1.0, 1e-6);
}

TEST(Backprop, SmallEncoderProjectorAndClassifierGradients) {
  std::mt19937_64 rng(8);
  const EncoderArch arch = small_arch();
  const std::size_t n = arch.feature_dim();
  ParamSetD params;
  params.merge(init_params(arch, 9).cast<double>(), "theta.");
  params.merge(init_params(ProjectorArch{n, 16, 6}, 10).cast<double>(), "phi.");
  params.merge(init_params(ClassifierArch{n, 12, 3}, 11).cast<double>(), "psi.");
  const TensorD x = random_tensor<double>(arch.input, rng, 0, 2);
  const TensorD wp = random_tensor<double>({1, 6}, rng, -1, 1);
  const TensorD we = random_tensor<double>({1, 12}, rng, -1, 1);
  const TensorD wc = random_tensor<double>({1, 3}, rng, -1, 1);

  auto loss = [&](const ParamSetD& p, ParamSetD* g) {
    const ParamSetD theta = p.extract("theta."), phi = p.extract("phi."), psi = p.extract("psi.");
    EncoderTape<double> et;
    const TensorD f = encode(arch, theta, x, &et).reshaped({1, n});
    MlpTape<double> pt, ct;
    const TensorD probs = project(phi, f, &pt);
    const auto cls = classify(psi, f, &ct);
    double v = 0.0;
    for (std::size_t i = 0; i < 6; ++i) v += wp[i] * probs[i];
    for (std::size_t i = 0; i < 12; ++i) v += we[i] * cls.embedding[i];
    for (std::size_t i = 0; i < 3; ++i) v += wc[i] * cls.probs[i];
    if (g) {
      ParamSetD gt = theta.zeros_like(), gp = phi.zeros_like(), gc = psi.zeros_like();
      TensorD gf = project_backward(phi, pt, wp, gp);
      const TensorD gf2 = classify_backward(psi, ct, we, wc, gc);
      for (std::size_t i = 0; i < gf.size(); ++i) gf[i] += gf2[i];
      encode_backward(arch, theta, et, gf.reshaped({n}), gt);
      ParamSetD all;
      all.merge(gt, "theta.");
      all.merge(gp, "phi.");
      all.merge(gc, "psi.");
      *g = all;
    }
    return v;
  };
  const auto r = grad_check(loss, params, {1e-6, 40, 12});
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst_param << "[" << r.worst_index << "]";
}

TEST(Backprop, FullSizeEncoderWithProjectorBatchOfTwo) {
  std::mt19937_64 rng(13);
  const EncoderArch arch;
  const std::size_t n = arch.feature_dim();
  ParamSetD params;
  params.merge(init_params(arch, 14).cast<double>(), "theta.");
  params.merge(init_params(ProjectorArch{n, 32, 8}, 15).cast<double>(), "phi.");
  const std::vector<TensorD> xs{random_tensor<double>(arch.input, rng), random_tensor<double>(arch.input, rng)};
  const TensorD w = random_tensor<double>({2, 8}, rng, -1, 1);

  auto loss = [&](const ParamSetD& p, ParamSetD* g) {
    const ParamSetD theta = p.extract("theta."), phi = p.extract("phi.");
    std::vector<EncoderTape<double>> tapes(2);
    TensorD f({2, n});
    for (std::size_t b = 0; b < 2; ++b) {
      const TensorD fb = encode(arch, theta, xs[b], &tapes[b]);
      std::copy(fb.values().begin(), fb.values().end(), f.data() + b * n);
    }
    MlpTape<double> pt;
    const TensorD probs = project(phi, f, &pt);
    double v = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) v += w[i] * probs[i];
    if (g) {
      ParamSetD gt = theta.zeros_like(), gp = phi.zeros_like();
      const TensorD gf = project_backward(phi, pt, w, gp);
      for (std::size_t b = 0; b < 2; ++b) {
        TensorD gfb({n});
        std::copy_n(gf.data() + b * n, n, gfb.data());
        encode_backward(arch, theta, tapes[b], gfb, gt);
      }
      ParamSetD all;
      all.merge(gt, "theta.");
      all.merge(gp, "phi.");
      *g = all;
    }
    return v;
  };
  const auto r = grad_check(loss, params, {1e-6, 3, 16});
  EXPECT_EQ(r.coords_checked, 36u);
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst_param << "[" << r.worst_index << "]";
}

TEST(Checkpoint, RoundTripInMemoryAndOnDisk) {
  ParamSet p = init_params(small_arch(), 17);
  p.add("arch.encoder", arch_to_tensor(small_arch()), false);
  const std::string bytes = serialize_checkpoint(p);
  EXPECT_EQ(bytes.substr(0, 4), "AFCK");
  const ParamSet back = deserialize_checkpoint(bytes);
  EXPECT_EQ(back, p);
  EXPECT_FALSE(back.trainable("arch.encoder"));
  EXPECT_FALSE(back.trainable(kInputNorm));
  EXPECT_TRUE(back.trainable("conv1.weight"));

  const auto path = std::filesystem::temp_directory_path() / "autofi_model_test.afck";
  save_checkpoint(path, p);
  EXPECT_EQ(load_checkpoint(path), p);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), std::runtime_error);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  ParamSet p;
  p.add("w", Tensor({2, 3}, 1.0f));
  const std::string bytes = serialize_checkpoint(p);

  std::string magic = bytes;
  magic[0] = 'X';
  EXPECT_NE(expect_throw_message([&] { deserialize_checkpoint(magic); }).find("bad magic"), std::string::npos);

  EXPECT_NE(expect_throw_message([&] { deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)); }).find("truncated"),
            std::string::npos);

  EXPECT_THROW(deserialize_checkpoint(bytes + "x"), std::runtime_error);

  // Header: magic(4) version(1) count(4) name_len(2) name(1) dtype(1) rank(1) dims...
  std::string huge = bytes;
  const std::size_t dim0 = 4 + 1 + 4 + 2 + 1 + 1 + 1;
  for (int i = 0; i < 8; ++i) huge[dim0 + i] = static_cast<char>(0xFF);
  EXPECT_NE(expect_throw_message([&] { deserialize_checkpoint(huge); }).find("overflow"), std::string::npos);

  std::string version = bytes;
  version[4] = 9;
  EXPECT_THROW(deserialize_checkpoint(version), std::runtime_error);
}

TEST(Checkpoint, BufferNames) {
  EXPECT_TRUE(is_buffer_name("arch.encoder"));
  EXPECT_TRUE(is_buffer_name("protos.centroids"));
  EXPECT_TRUE(is_buffer_name("opt.v.theta1.conv1.weight"));
  EXPECT_TRUE(is_buffer_name("theta1.input.norm"));
  EXPECT_FALSE(is_buffer_name("theta1.conv1.weight"));
}
