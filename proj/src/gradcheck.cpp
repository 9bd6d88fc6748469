#include "ceidm/gradcheck.hpp"

#include <cmath>

#include "ceidm/ecn.hpp"
#include "ceidm/errors.hpp"
#include "ceidm/iea.hpp"
#include "ceidm/numerics.hpp"
#include "ceidm/rng.hpp"

namespace ceidm {

namespace {

constexpr double kEps = 1e-5;

// --- parameter packing helpers -------------------------------------------

Index packed_size(const LinearLayer& l) { return l.weight.size() + l.bias.size(); }

void pack(const LinearLayer& l, Vec& out, Index& at) {
  for (Index c = 0; c < l.weight.cols(); ++c)
    for (Index r = 0; r < l.weight.rows(); ++r) out[at++] = l.weight(r, c);
  for (Index i = 0; i < l.bias.size(); ++i) out[at++] = l.bias[i];
}

void unpack(LinearLayer& l, const Vec& in, Index& at) {
  for (Index c = 0; c < l.weight.cols(); ++c)
    for (Index r = 0; r < l.weight.rows(); ++r) l.weight(r, c) = in[at++];
  for (Index i = 0; i < l.bias.size(); ++i) l.bias[i] = in[at++];
}

void pack_grad(const Mat& d_weight, const Vec& d_bias, Vec& out, Index& at) {
  for (Index c = 0; c < d_weight.cols(); ++c)
    for (Index r = 0; r < d_weight.rows(); ++r) out[at++] = d_weight(r, c);
  for (Index i = 0; i < d_bias.size(); ++i) out[at++] = d_bias[i];
}

// Backward through a single linear layer given d(output); returns d(input).
Vec linear_backward(const LinearLayer& l, const Vec& x, const Vec& d_out,
                    Mat& d_weight, Vec& d_bias) {
  d_weight = d_out * x.transpose();
  d_bias = d_out;
  return l.weight.transpose() * d_out;
}

// Backward through the 2-layer MLP; accumulates parameter grads.
Vec mlp_backward(const Mlp& mlp, const Vec& x, const Vec& d_out, Mat& d_w1,
                 Vec& d_b1, Mat& d_w2, Vec& d_b2) {
  const Vec z1 = linear_apply(mlp.hidden, x);
  Vec a(z1.size());
  for (Index i = 0; i < z1.size(); ++i) a[i] = quick_gelu(z1[i]);
  d_w2 = d_out * a.transpose();
  d_b2 = d_out;
  Vec d_a = mlp.out.weight.transpose() * d_out;
  Vec d_z1(z1.size());
  for (Index i = 0; i < z1.size(); ++i) d_z1[i] = d_a[i] * quick_gelu_grad(z1[i]);
  d_w1 = d_z1 * x.transpose();
  d_b1 = d_z1;
  return mlp.hidden.weight.transpose() * d_z1;
}

// --- case 1: quadratic ----------------------------------------------------

GradCase quadratic_case(Rng& rng) {
  const Vec x = rng.gaussian_vec(12);
  auto f = [](const Vec& v) { return v.squaredNorm(); };
  auto grad = [](const Vec& v) { return Vec(2.0 * v); };
  return {"quadratic_norm", grad_check(f, grad, x, kEps), 1e-8};
}

// --- case 2: softmax cross-entropy ----------------------------------------

GradCase cross_entropy_case(Rng& rng) {
  const Index n = 9;
  const Index target = 3;
  const Vec logits = rng.gaussian_vec(n) * 2.0;
  auto f = [target](const Vec& z) {
    return -std::log(softmax(z)[target]);
  };
  auto grad = [target](const Vec& z) {
    Vec g = softmax(z);
    g[target] -= 1.0;
    return g;
  };
  return {"softmax_cross_entropy", grad_check(f, grad, logits, kEps), 1e-6};
}

// --- case 3: gated attention, gradient w.r.t. the value projection --------

GradCase gated_attention_case(Rng& rng) {
  const Index d = 8;
  const Index nv = 4, ni = 5;
  const Mat visual = rng.gaussian_mat(nv, d);
  const Mat info = rng.gaussian_mat(ni, d);
  const Mat readout = rng.gaussian_mat(nv, d);
  AttentionParams params = AttentionParams::init(d, rng);
  IEAConfig cfg;  // delta 1.3, w 0.7, gamma 1.0

  Mat joined(nv + ni, d);
  joined << visual, info;
  const double gate = cfg.w * std::tanh(cfg.gamma);

  auto with_wv = [&](const Vec& p) {
    AttentionParams q = params;
    Index at = 0;
    for (Index c = 0; c < d; ++c)
      for (Index r = 0; r < d; ++r) q.wv(r, c) = p[at++];
    return q;
  };
  auto f = [&](const Vec& p) {
    const Mat out = gated_inject(visual, info, with_wv(p), cfg);
    return (out.cwiseProduct(readout)).sum();
  };
  auto grad = [&](const Vec& p) {
    const AttentionParams q = with_wv(p);
    Mat d_att = Mat::Zero(nv + ni, d);
    d_att.topRows(nv) = gate * cfg.delta * readout;
    const AttentionGrads g = self_attention_backward(joined, q, d_att);
    Vec out(d * d);
    Index at = 0;
    for (Index c = 0; c < d; ++c)
      for (Index r = 0; r < d; ++r) out[at++] = g.d_wv(r, c);
    return out;
  };

  Vec p0(d * d);
  Index at = 0;
  for (Index c = 0; c < d; ++c)
    for (Index r = 0; r < d; ++r) p0[at++] = params.wv(r, c);
  return {"gated_attention_value_proj", grad_check(f, grad, p0, kEps), 1e-4};
}

// --- case 4: deep triplet embedding through the role projections ----------

GradCase triplet_embedding_case(Rng& rng) {
  const Index d = 8;
  const Index text = 6;
  const Vec x_h = rng.gaussian_vec(text);
  const Vec x_r = rng.gaussian_vec(text);
  const Vec x_t = rng.gaussian_vec(text);
  const Mat readout = rng.gaussian_mat(3, d);
  AttentionParams attn = AttentionParams::init(d, rng);

  LinearLayer p_h = LinearLayer::init(d, text, rng);
  LinearLayer p_r = LinearLayer::init(d, text, rng);
  LinearLayer p_t = LinearLayer::init(d, text, rng);
  const Index per = packed_size(p_h);

  auto rebuild = [&](const Vec& p) {
    LinearLayer h = p_h, r = p_r, t = p_t;
    Index at = 0;
    unpack(h, p, at);
    unpack(r, p, at);
    unpack(t, p, at);
    return std::array<LinearLayer, 3>{h, r, t};
  };
  auto forward_tokens = [&](const std::array<LinearLayer, 3>& proj) {
    Mat stacked(3, d);
    stacked.row(0) = linear_apply(proj[0], x_h).transpose();
    stacked.row(1) = linear_apply(proj[1], x_r).transpose();
    stacked.row(2) = linear_apply(proj[2], x_t).transpose();
    return stacked;
  };
  auto f = [&](const Vec& p) {
    const Mat stacked = forward_tokens(rebuild(p));
    const Mat e = stacked + self_attention(stacked, attn);
    return (e.cwiseProduct(readout)).sum();
  };
  auto grad = [&](const Vec& p) {
    const auto proj = rebuild(p);
    const Mat stacked = forward_tokens(proj);
    // e = stacked + selfattn(stacked); d(stacked) = C + attn backward of C
    const AttentionGrads g = self_attention_backward(stacked, attn, readout);
    const Mat d_stacked = readout + g.d_tokens;
    Vec out(3 * per);
    Index at = 0;
    const Vec inputs[3] = {x_h, x_r, x_t};
    for (int role = 0; role < 3; ++role) {
      Mat dw;
      Vec db;
      linear_backward(proj[role], inputs[role],
                      d_stacked.row(role).transpose(), dw, db);
      pack_grad(dw, db, out, at);
    }
    return out;
  };

  Vec p0(3 * per);
  Index at = 0;
  pack(p_h, p0, at);
  pack(p_r, p0, at);
  pack(p_t, p0, at);
  return {"triplet_deep_embedding", grad_check(f, grad, p0, kEps), 1e-4};
}

// --- case 5: entity mask -> apply -> multiscale -> dynamic fuse -----------

struct EntityChainFixture {
  Index text = 5;
  Index d = 6;
  int h = 4, w = 4;
  double temp = 2.0;
  FeatureMap visual;
  Vec e_object;        // fixed second entity
  ECNParams params;    // convs, gate and proj stay fixed
  Mat readout;
};

// Forward through the documented chain with mask MLP and subject embedding
// taken from the packed vector.
double entity_chain_forward(const EntityChainFixture& fx, const Vec& e_subject,
                            const Mlp& mask_mlp) {
  const SoftMask ms = entity_mask(fx.visual, e_subject, mask_mlp, fx.temp);
  const SoftMask mo = entity_mask(fx.visual, fx.e_object, mask_mlp, fx.temp);
  const FeatureMap ys =
      multiscale_enhance(apply_mask(fx.visual, ms), fx.params.enhance);
  const FeatureMap yo =
      multiscale_enhance(apply_mask(fx.visual, mo), fx.params.enhance);
  const FuseResult fused = dynamic_fuse(ys, yo, fx.params);
  return (fused.map.data.cwiseProduct(fx.readout)).sum();
}

// d(readout)/d(mask) for one entity path, plus shared conv/gate plumbing.
// Returns the gradient w.r.t. [e_subject | mask mlp params].
Vec entity_chain_grad(const EntityChainFixture& fx, const Vec& e_subject,
                      const Mlp& mask_mlp) {
  const Index d = fx.d;
  const Index hw = fx.visual.positions();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  // Recompute forward intermediates.
  const Vec w_s = mask_mlp.apply(e_subject);
  const Vec w_o = mask_mlp.apply(fx.e_object);
  const Vec scores_s = fx.visual.data * w_s * inv_sqrt_d;
  const Vec scores_o = fx.visual.data * w_o * inv_sqrt_d;
  Vec m_s(hw), m_o(hw);
  for (Index p = 0; p < hw; ++p) {
    m_s[p] = sigmoid(scores_s[p] / fx.temp);
    m_o[p] = sigmoid(scores_o[p] / fx.temp);
  }
  const FeatureMap xs{fx.h, fx.w, m_s.asDiagonal() * fx.visual.data};
  const FeatureMap xo{fx.h, fx.w, m_o.asDiagonal() * fx.visual.data};
  const FeatureMap ys = multiscale_enhance(xs, fx.params.enhance);
  const FeatureMap yo = multiscale_enhance(xo, fx.params.enhance);

  FeatureMap concat{fx.h, fx.w, Mat(hw, 2 * d)};
  concat.data << ys.data, yo.data;
  const Vec pooled = concat.data.colwise().mean();
  const Vec gate_out = fx.params.fuse_gate.apply(pooled);
  const Vec alpha = softmax(gate_out);
  std::vector<Mat> branch_out;
  for (const auto& conv : fx.params.fuse_branches)
    branch_out.push_back(conv_apply(conv, concat).data);

  // Backward.
  const Mat d_blended = fx.readout * fx.params.fuse_proj;  // HW x 2d
  Vec d_alpha(alpha.size());
  for (Index k = 0; k < alpha.size(); ++k)
    d_alpha[k] = (branch_out[static_cast<size_t>(k)].cwiseProduct(d_blended)).sum();
  const double mix = d_alpha.dot(alpha);
  const Vec d_gate = (alpha.array() * (d_alpha.array() - mix)).matrix();

  Mat dummy_w1, dummy_w2;
  Vec dummy_b1, dummy_b2;
  const Vec d_pooled = mlp_backward(fx.params.fuse_gate, pooled, d_gate,
                                    dummy_w1, dummy_b1, dummy_w2, dummy_b2);

  Mat d_concat = Mat::Zero(hw, 2 * d);
  for (Index k = 0; k < alpha.size(); ++k) {
    FeatureMap contrib{fx.h, fx.w, alpha[k] * d_blended};
    d_concat += conv_apply_transpose(fx.params.fuse_branches[static_cast<size_t>(k)],
                                     contrib)
                    .data;
  }
  d_concat.rowwise() += d_pooled.transpose() / static_cast<double>(hw);

  auto back_through_entity = [&](const Mat& d_y, const Vec& scores,
                                 const Vec& mask) {
    // multiscale: y = x + mean_k conv_k(x)
    FeatureMap d_y_map{fx.h, fx.w, d_y};
    Mat d_x = d_y;
    const double inv_k = 1.0 / static_cast<double>(fx.params.enhance.size());
    for (const auto& conv : fx.params.enhance)
      d_x += inv_k * conv_apply_transpose(conv, d_y_map).data;
    // apply_mask: x_p = m_p V_p
    Vec d_mask(hw);
    for (Index p = 0; p < hw; ++p)
      d_mask[p] = d_x.row(p).dot(fx.visual.data.row(p));
    // mask: m = sigmoid(score / temp)
    Vec d_scores(hw);
    for (Index p = 0; p < hw; ++p)
      d_scores[p] = d_mask[p] * mask[p] * (1.0 - mask[p]) / fx.temp;
    // score_p = <V_p, w> / sqrt(d)
    (void)scores;
    return Vec(fx.visual.data.transpose() * d_scores * inv_sqrt_d);
  };

  const Vec d_w_s = back_through_entity(d_concat.leftCols(d), scores_s, m_s);
  const Vec d_w_o = back_through_entity(d_concat.rightCols(d), scores_o, m_o);

  Mat dW1_s, dW2_s, dW1_o, dW2_o;
  Vec db1_s, db2_s, db1_o, db2_o;
  const Vec d_e_subject =
      mlp_backward(mask_mlp, e_subject, d_w_s, dW1_s, db1_s, dW2_s, db2_s);
  mlp_backward(mask_mlp, fx.e_object, d_w_o, dW1_o, db1_o, dW2_o, db2_o);

  Vec out(fx.text + packed_size(mask_mlp.hidden) + packed_size(mask_mlp.out));
  Index at = 0;
  for (Index i = 0; i < fx.text; ++i) out[at++] = d_e_subject[i];
  pack_grad(dW1_s + dW1_o, db1_s + db1_o, out, at);
  pack_grad(dW2_s + dW2_o, db2_s + db2_o, out, at);
  return out;
}

GradCase entity_chain_case(Rng& rng) {
  EntityChainFixture fx;
  fx.visual = FeatureMap{fx.h, fx.w, rng.gaussian_mat(fx.h * fx.w, fx.d)};
  fx.e_object = rng.gaussian_vec(fx.text);
  ECNConfig cfg;
  cfg.kernel_sizes = {1, 3};
  fx.params = ECNParams::init(fx.d, fx.text, cfg, rng);
  fx.readout = rng.gaussian_mat(fx.h * fx.w, fx.d);

  const Vec e0 = rng.gaussian_vec(fx.text);
  const Mlp mlp0 = fx.params.mask_mlp;

  const Index n_mlp = packed_size(mlp0.hidden) + packed_size(mlp0.out);
  Vec p0(fx.text + n_mlp);
  Index at = 0;
  for (Index i = 0; i < fx.text; ++i) p0[at++] = e0[i];
  pack(mlp0.hidden, p0, at);
  pack(mlp0.out, p0, at);

  auto split = [&](const Vec& p) {
    Vec e(fx.text);
    for (Index i = 0; i < fx.text; ++i) e[i] = p[i];
    Mlp mlp = mlp0;
    Index pos = fx.text;
    unpack(mlp.hidden, p, pos);
    unpack(mlp.out, p, pos);
    return std::pair<Vec, Mlp>{e, mlp};
  };
  auto f = [&](const Vec& p) {
    const auto [e, mlp] = split(p);
    return entity_chain_forward(fx, e, mlp);
  };
  auto grad = [&](const Vec& p) {
    const auto [e, mlp] = split(p);
    return entity_chain_grad(fx, e, mlp);
  };
  return {"entity_control_chain", grad_check(f, grad, p0, kEps), 1e-4};
}

}  // namespace

std::vector<GradCase> run_gradient_suite(std::uint64_t seed) {
  Rng rng = substream(seed, "gradcheck");
  std::vector<GradCase> cases;
  cases.push_back(quadratic_case(rng));
  cases.push_back(cross_entropy_case(rng));
  cases.push_back(gated_attention_case(rng));
  cases.push_back(triplet_embedding_case(rng));
  cases.push_back(entity_chain_case(rng));
  return cases;
}

bool gradient_suite_passed(const std::vector<GradCase>& cases) {
  for (const auto& c : cases)
    if (!c.passed()) return false;
  return true;
}

}  // namespace ceidm
