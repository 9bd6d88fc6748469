#include "ceidm/iea.hpp"

#include <cmath>

#include "ceidm/errors.hpp"

namespace ceidm {

void IEAConfig::validate() const {
  if (!(delta > 0.0)) throw ValidationError("iea: delta must be positive");
  if (w < 0.0 || w > 1.0) throw ValidationError("iea: w must lie in [0, 1]");
  if (!(0.0 <= s2 && s2 <= s1 && s1 <= 1.0))
    throw ValidationError("iea: need 0 <= s2 <= s1 <= 1");
  if (!std::isfinite(gamma)) throw ValidationError("iea: gamma must be finite");
}

Mat stren_att(const Mat& tokens, const AttentionParams& params, double delta) {
  if (tokens.rows() == 0) throw ValidationError("stren_att: empty sequence");
  return delta * self_attention(tokens, params);
}

Mat gated_inject(const Mat& visual, const Mat& info,
                 const AttentionParams& params, const IEAConfig& cfg,
                 double strength) {
  if (info.rows() > 0 && info.cols() != visual.cols())
    throw ValidationError("gated_inject: visual/info dim mismatch");
  const double gate = strength * cfg.w * std::tanh(cfg.gamma);
  if (gate == 0.0) return visual;  // exact identity, bitwise

  Mat joined(visual.rows() + info.rows(), visual.cols());
  joined.topRows(visual.rows()) = visual;
  if (info.rows() > 0) joined.bottomRows(info.rows()) = info;
  const Mat att = stren_att(joined, params, cfg.delta);
  return visual + gate * att.topRows(visual.rows());
}

double schedule_active(int step_index, int total_steps, const IEAConfig& cfg) {
  if (total_steps <= 0)
    throw ValidationError("schedule_active: total steps must be positive");
  if (step_index < 0 || step_index >= total_steps)
    throw ValidationError("schedule_active: step index out of range");
  const double progress =
      static_cast<double>(step_index) / static_cast<double>(total_steps);
  return progress < cfg.s2 ? cfg.s1 : 0.0;
}

Mat collect_info_tokens(const std::vector<InteractionTokens>& explicit_tokens,
                        const std::vector<ImplicitTokens>& implicit_tokens,
                        const std::vector<OffsetGroup>& offset_groups, Index d) {
  Index rows = 3 * static_cast<Index>(explicit_tokens.size()) +
               3 * static_cast<Index>(implicit_tokens.size());
  for (const auto& g : offset_groups)
    rows += 3 * static_cast<Index>(g.entries.size());

  Mat info(rows, d);
  Index r = 0;
  auto push = [&](const Vec& v) {
    if (v.size() != d)
      throw ValidationError("collect_info_tokens: token dim mismatch");
    info.row(r++) = v.transpose();
  };
  for (const auto& t : explicit_tokens) {
    push(t.e_s);
    push(t.e_a);
    push(t.e_o);
  }
  for (const auto& t : implicit_tokens) {
    push(t.e_h);
    push(t.e_r);
    push(t.e_t);
  }
  for (const auto& g : offset_groups)
    for (const auto& triple : g.entries) {
      push(triple.e_s);
      push(triple.e_a);
      push(triple.e_o);
    }
  return info;
}

Mat iea_forward(const Mat& visual,
                const std::vector<InteractionTokens>& explicit_tokens,
                const std::vector<ImplicitTokens>& implicit_tokens,
                const std::vector<OffsetGroup>& offset_groups,
                const AttentionParams& params, const IEAConfig& cfg,
                int step_index, int total_steps) {
  const double strength = schedule_active(step_index, total_steps, cfg);
  if (strength == 0.0) return visual;
  const Mat info = collect_info_tokens(explicit_tokens, implicit_tokens,
                                       offset_groups, visual.cols());
  if (info.rows() == 0) return visual;
  return gated_inject(visual, info, params, cfg, strength);
}

}  // namespace ceidm
