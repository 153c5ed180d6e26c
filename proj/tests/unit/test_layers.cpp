#include <gtest/gtest.h>

#include <cmath>

#include "../support/test_support.hpp"

using namespace fabir;
using testsupport::check_gradients;
using testsupport::random_tensor;
using testsupport::to_mat;
using T = Tensor<double>;
using oracle::Mat;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.word_dim = 4;
  c.char_dim = 4;
  c.d_model = 4;
  c.n_heads = 2;
  c.ff_hidden_processing = 6;
  c.ff_hidden_reduction = 6;
  c.att_kernel_w = 3;
  return c;
}

Mat plus(Mat a, const Mat& b) {
  for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
  return a;
}

Mat norm_rows(const Mat& x, const T& gain, const T& bias, double eps) {
  Mat y(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double mean = 0, var = 0;
    for (std::size_t j = 0; j < x.cols; ++j) mean += x(i, j) / static_cast<double>(x.cols);
    for (std::size_t j = 0; j < x.cols; ++j) var += (x(i, j) - mean) * (x(i, j) - mean) / static_cast<double>(x.cols);
    for (std::size_t j = 0; j < x.cols; ++j) y(i, j) = gain[j] * (x(i, j) - mean) / std::sqrt(var + eps) + bias[j];
  }
  return y;
}

Mat ff_rows(const Mat& x, const FeedForwardParams<double>& p) {
  Mat h = oracle::product(x, to_mat(p.w1));
  for (std::size_t i = 0; i < h.rows; ++i)
    for (std::size_t j = 0; j < h.cols; ++j) h(i, j) = std::max(0.0, h(i, j) + p.b1[j]);
  Mat y = oracle::product(h, to_mat(p.w2));
  for (std::size_t i = 0; i < y.rows; ++i)
    for (std::size_t j = 0; j < y.cols; ++j) y(i, j) += p.b2[j];
  return y;
}

oracle::AttentionWeights weights_of(const AttentionParams<double>& a, const ModelConfig& cfg) {
  oracle::AttentionWeights w;
  w.heads = a.proj.n_heads;
  w.w_u = to_mat(a.proj.w_u);
  w.w_k = to_mat(a.proj.w_k);
  w.w_v = to_mat(a.proj.w_v);
  w.w_o = to_mat(a.proj.w_o);
  w.kernel = a.kernel.h.values();
  w.kh = cfg.att_kernel_h;
  w.kw = cfg.att_kernel_w;
  return w;
}

// Processing layer evaluated with scalar loops (unpadded, no dropout).
std::pair<Mat, Mat> processing_oracle(const Mat& P, const Mat& Q, const ProcessingLayerParams<double>& p,
                                      const ModelConfig& cfg) {
  const double eps = cfg.layer_norm_eps;
  const auto self_w = weights_of(p.self_att, cfg), cross_w = weights_of(p.cross_att, cfg);
  Mat p1 = norm_rows(plus(P, oracle::conv_attention(P, P, P, self_w, false).output), p.norm_self_p.gain, p.norm_self_p.bias, eps);
  Mat q1 = norm_rows(plus(Q, oracle::conv_attention(Q, Q, Q, self_w, false).output), p.norm_self_q.gain, p.norm_self_q.bias, eps);
  const bool column = cfg.cross_softmax_axis == SoftmaxAxis::ColumnWise;
  Mat p2 = norm_rows(plus(p1, oracle::conv_attention(p1, q1, q1, cross_w, column).output), p.norm_cross_p.gain,
                     p.norm_cross_p.bias, eps);
  Mat p3 = norm_rows(plus(p2, ff_rows(p2, p.ff_p)), p.norm_ff_p.gain, p.norm_ff_p.bias, eps);
  Mat q3 = norm_rows(plus(q1, ff_rows(q1, p.ff_q)), p.norm_ff_q.gain, p.norm_ff_q.bias, eps);
  return {p3, q3};
}

// Give layer norms non-trivial gains and biases so the oracle exercises them.
void jitter_norms(ParameterSet<double>& params, Rng& rng) {
  for (const auto& p : params.trainable()) {
    if (p.name.find("norm") == std::string::npos) continue;
    Tensor<double> t = p.tensor;
    for (auto& v : t.mutable_data()) v += rng.uniform(-0.3, 0.3);
  }
}

}  // namespace

TEST(FeedForward, ZeroAndIdentity) {
  FeedForwardParams<double> zero{T::zeros({3, 3}), T::zeros({3}), T::zeros({3, 3}), T::zeros({3})};
  const T y = feed_forward(T({2, 3}, {1, -2, 3, 4, 5, -6}), zero);
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
  const T eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  FeedForwardParams<double> id{eye, T::zeros({3}), eye, T::zeros({3})};
  const T x({2, 3}, {1, 0, 3, 4, 5, 0.5});
  EXPECT_EQ(feed_forward(x, id).values(), x.values());
}

TEST(FeedForward, Gradients) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    FeedForwardParams<double> p{random_tensor({3, 5}, rng), random_tensor({5}, rng), random_tensor({5, 3}, rng),
                                random_tensor({3}, rng)};
    T x = random_tensor({4, 3}, rng);
    const T w = random_tensor({4, 3}, rng, -1, 1, false);
    const auto r = check_gradients("feed_forward", [&] { return sum(mul(feed_forward(x, p), w)); }, {x, p.w1, p.b1, p.w2, p.b2}, 1e-4);
    EXPECT_TRUE(r.pass) << r.max_rel_diff;
  }
}

TEST(Sublayer, ZeroMapIsLayerNormAndShapeChecked) {
  Rng rng(2);
  const T x = random_tensor({3, 4}, rng, -1, 1, false);
  const LayerNormParams<double> norm{T::full({4}, 1.0), T::zeros({4})};
  EXPECT_EQ(sublayer_wrap(x, T::zeros({3, 4}), norm, 1e-6).values(), layer_norm(x, norm, 1e-6).values());
  EXPECT_THROW(sublayer_wrap(x, T::zeros({3, 5}), norm, 1e-6), DimensionError);
}

TEST(ProcessingLayer, ShapesAndSharedSelfAttention) {
  const ModelConfig cfg = tiny_config();
  ParameterSet<double> params;
  Rng rng(3);
  const auto p = make_processing_layer(params, "layers.0", 4, 6, cfg, rng);
  EXPECT_TRUE(params.contains("layers.0.self.w_u"));
  EXPECT_FALSE(params.contains("layers.0.cross_q.w_u"));
  NoGradScope<double> ng;
  const T P = random_tensor({5, 4}, rng), Q = random_tensor({3, 4}, rng);
  auto [po, qo] = processing_layer(P, Q, SequenceMasks::unpadded(5, 3), p, cfg, 1.0);
  EXPECT_EQ(po.shape(), (Shape{5, 4}));
  EXPECT_EQ(qo.shape(), (Shape{3, 4}));
  // Swapping the streams routes both through the one self-attention block:
  // the P stream's first sublayer on Q equals the Q stream's on Q up to its norm.
  const T a = self_attention(Q, p.self_att, AttentionMask::all(3, 3));
  auto [ps, qs] = processing_layer(Q, P, SequenceMasks::unpadded(3, 5), p, cfg, 1.0);
  (void)ps;
  (void)qs;
  const T b = self_attention(Q, p.self_att, AttentionMask::all(3, 3));
  EXPECT_EQ(a.values(), b.values());
}

TEST(ProcessingLayer, TwoTokenStepOracle) {
  for (auto axis : {SoftmaxAxis::ColumnWise, SoftmaxAxis::RowWise}) {
    ModelConfig cfg = tiny_config();
    cfg.cross_softmax_axis = axis;
    ParameterSet<double> params;
    Rng rng(4);
    const auto p = make_processing_layer(params, "layers.0", 4, 6, cfg, rng);
    jitter_norms(params, rng);
    const T P = random_tensor({2, 4}, rng), Q = random_tensor({2, 4}, rng);
    auto [po, qo] = processing_layer(P, Q, SequenceMasks::unpadded(2, 2), p, cfg, 1.0);
    auto [pw, qw] = processing_oracle(to_mat(P), to_mat(Q), p, cfg);
    EXPECT_TRUE(oracle::compare("processing_p_2x2", po.values(), pw.v, 1e-10).pass);
    EXPECT_TRUE(oracle::compare("processing_q_2x2", qo.values(), qw.v, 1e-10).pass);
  }
}

TEST(ProcessingLayer, BidirectionalAddsQuestionCrossAttention) {
  ModelConfig cfg = tiny_config();
  cfg.bidirectional_cross = true;
  ParameterSet<double> params;
  Rng rng(5);
  const auto p = make_processing_layer(params, "layers.0", 4, 6, cfg, rng);
  ASSERT_TRUE(p.cross_q_att.has_value());
  EXPECT_TRUE(params.contains("layers.0.cross_q.kernel"));
  EXPECT_TRUE(params.contains("layers.0.norm_cross_q.gain"));
  NoGradScope<double> ng;
  auto [po, qo] = processing_layer(random_tensor({3, 4}, rng), random_tensor({2, 4}, rng), SequenceMasks::unpadded(3, 2), p, cfg, 1.0);
  EXPECT_EQ(qo.shape(), (Shape{2, 4}));
}

TEST(ProcessingLayer, PaddingDoesNotLeak) {
  const ModelConfig cfg = tiny_config();
  ParameterSet<double> params;
  Rng rng(6);
  const auto p = make_processing_layer(params, "layers.0", 4, 6, cfg, rng);
  T P = random_tensor({5, 4}, rng, -1, 1, false), Q = random_tensor({4, 4}, rng, -1, 1, false);
  const SequenceMasks masks{5, 3, 4, 2};
  NoGradScope<double> ng;
  auto [p1, q1] = processing_layer(P, Q, masks, p, cfg, 1.0);
  for (std::size_t i = 12; i < 20; ++i) P.mutable_data()[i] = rng.uniform(-9, 9);
  for (std::size_t i = 8; i < 16; ++i) Q.mutable_data()[i] = rng.uniform(-9, 9);
  auto [p2, q2] = processing_layer(P, Q, masks, p, cfg, 1.0);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(p1[i], p2[i], 1e-12);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(q1[i], q2[i], 1e-12);
}

TEST(ProcessingLayer, DeterministicWithoutDropout) {
  const ModelConfig cfg = tiny_config();
  ParameterSet<double> params;
  Rng rng(7);
  const auto p = make_processing_layer(params, "layers.0", 4, 6, cfg, rng);
  const T P = random_tensor({4, 4}, rng, -1, 1, false), Q = random_tensor({3, 4}, rng, -1, 1, false);
  auto a = processing_layer(P, Q, SequenceMasks::unpadded(4, 3), p, cfg, 1.0);
  auto b = processing_layer(P, Q, SequenceMasks::unpadded(4, 3), p, cfg, 1.0);
  EXPECT_EQ(a.first.values(), b.first.values());
  EXPECT_EQ(a.second.values(), b.second.values());
}

TEST(ProcessingLayer, Gradients) {
  const ModelConfig cfg = tiny_config();
  ParameterSet<double> params;
  Rng rng(8);
  const auto p = make_processing_layer(params, "layers.0", 4, 6, cfg, rng);
  T P = random_tensor({3, 4}, rng), Q = random_tensor({2, 4}, rng);
  const T wp = random_tensor({3, 4}, rng, -1, 1, false), wq = random_tensor({2, 4}, rng, -1, 1, false);
  std::vector<T> inputs{P, Q};
  for (const auto& t : params.trainable()) inputs.push_back(t.tensor);
  const auto r = check_gradients("processing_layer", [&] {
    auto [po, qo] = processing_layer(P, Q, SequenceMasks{3, 3, 2, 2}, p, cfg, 1.0);
    return add(sum(mul(po, wp)), sum(mul(qo, wq)));
  }, inputs, 1e-3, 10);
  EXPECT_TRUE(r.pass) << r.max_rel_diff;
}

TEST(ReductionLayer, ZeroReductionMatrixLeavesEncoding) {
  const ModelConfig cfg = tiny_config();
  ParameterSet<double> params;
  Rng rng(9);
  const auto p = make_reduction_layer(params, "reduction", cfg, rng);
  for (auto& v : Tensor<double>(p.w_reduction).mutable_data()) v = 0.0;
  const T op = random_tensor({3, 8}, rng, -1, 1, false), oq = random_tensor({2, 8}, rng, -1, 1, false);
  auto [pr, qr] = reduction_layer(op, oq, SequenceMasks::unpadded(3, 2), p, cfg);
  EXPECT_EQ(pr.shape(), (Shape{3, 4}));
  EXPECT_EQ(qr.shape(), (Shape{2, 4}));
  const auto ep = decoupled_attention(op, encode_positions<double>(3, 8), encode_positions<double>(3, 4), *p.decoupled,
                                      AttentionMask::all(3, 3), 1e-6);
  const auto eq = decoupled_attention(oq, encode_positions<double>(2, 8), encode_positions<double>(2, 4), *p.decoupled,
                                      AttentionMask::all(2, 2), 1e-6);
  EXPECT_EQ(pr.values(), ep.encoding.values());
  EXPECT_EQ(qr.values(), eq.encoding.values());
}

TEST(ReductionLayer, TwoTokenStepOracle) {
  const ModelConfig cfg = tiny_config();
  ParameterSet<double> params;
  Rng rng(10);
  const auto p = make_reduction_layer(params, "reduction", cfg, rng);
  jitter_norms(params, rng);
  const T op = random_tensor({2, 8}, rng, -1, 1, false), oq = random_tensor({2, 8}, rng, -1, 1, false);
  auto [pr, qr] = reduction_layer(op, oq, SequenceMasks::unpadded(2, 2), p, cfg);

  const auto& d = *p.decoupled;
  oracle::AttentionWeights emb, enc;
  emb.heads = enc.heads = 2;
  emb.w_u = enc.w_u = to_mat(d.w_u);
  emb.w_k = enc.w_k = to_mat(d.w_k);
  emb.w_v = to_mat(d.embedding.w_v);
  emb.w_o = to_mat(d.embedding.w_o);
  enc.w_v = to_mat(d.encoding.w_v);
  enc.w_o = to_mat(d.encoding.w_o);
  emb.kernel = enc.kernel = d.kernel.h.values();
  emb.kw = enc.kw = 3;
  const Mat e_in = to_mat(encode_positions<double>(2, 8)), e_red = to_mat(encode_positions<double>(2, 4));
  auto branch = [&](const Mat& omega) {
    const Mat x = plus(omega, e_in);
    const Mat om = norm_rows(plus(x, oracle::conv_attention(x, x, x, emb, false).output), d.ln_embedding_gain,
                             d.ln_embedding_bias, cfg.layer_norm_eps);
    const Mat e = norm_rows(plus(e_red, oracle::conv_attention(x, x, e_red, enc, false).output), d.ln_encoding_gain,
                            d.ln_encoding_bias, cfg.layer_norm_eps);
    return std::pair{om, e};
  };
  auto [omp, ep] = branch(to_mat(op));
  auto [omq, eq] = branch(to_mat(oq));
  auto [pp, qq] = processing_oracle(omp, omq, *p.processing, cfg);
  Mat wt(8, 4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 8; ++j) wt(j, i) = p.w_reduction.at(i, j);
  EXPECT_TRUE(oracle::compare("reduction_p_2", pr.values(), plus(oracle::product(pp, wt), ep).v, 1e-10).pass);
  EXPECT_TRUE(oracle::compare("reduction_q_2", qr.values(), plus(oracle::product(qq, wt), eq).v, 1e-10).pass);
}

TEST(ReductionLayer, FeedForwardAblation) {
  ModelConfig cfg = tiny_config();
  cfg.use_reduction_layer = false;
  ParameterSet<double> params;
  Rng rng(11);
  const auto p = make_reduction_layer(params, "reduction", cfg, rng);
  EXPECT_FALSE(p.decoupled.has_value());
  EXPECT_TRUE(params.contains("reduction.ff.w1"));
  const T op = random_tensor({3, 8}, rng, -1, 1, false), oq = random_tensor({2, 8}, rng, -1, 1, false);
  auto [pr, qr] = reduction_layer(op, oq, SequenceMasks::unpadded(3, 2), p, cfg);
  const Mat want = plus(ff_rows(to_mat(op), *p.ff), to_mat(encode_positions<double>(3, 4)));
  EXPECT_TRUE(oracle::compare("reduction_ff_ablation", pr.values(), want.v, 1e-12).pass);
  EXPECT_EQ(qr.shape(), (Shape{2, 4}));
}

TEST(ReductionLayer, WrongWidthIsDimensionError) {
  const ModelConfig cfg = tiny_config();
  ParameterSet<double> params;
  Rng rng(12);
  const auto p = make_reduction_layer(params, "reduction", cfg, rng);
  EXPECT_THROW(reduction_layer(T::zeros({2, 4}), T::zeros({2, 4}), SequenceMasks::unpadded(2, 2), p, cfg), DimensionError);
}
