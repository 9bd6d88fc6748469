#pragma once

#include <vector>

#include "ceidm/action_offset.hpp"
#include "ceidm/implicit_mining.hpp"
#include "ceidm/numerics.hpp"

namespace ceidm {

struct IEAConfig {
  double delta = 1.3;  // final attention scaling
  double w = 0.7;      // output fusion weight
  double s1 = 1.0;     // injection strength while active
  double s2 = 0.7;     // active fraction of the sampling run
  double gamma = 1.0;  // gate; tanh(0) = 0 makes the layer an exact identity

  void validate() const;
};

// Self-attention over the concatenated token sequence with the output scaled
// by delta: softmax(Q K^T / sqrt(d)) V * delta.
Mat stren_att(const Mat& tokens, const AttentionParams& params, double delta);

// v + strength * w * tanh(gamma) * visual rows of stren_att([v | info]).
// Info rows attend and are attended to, but only the first |v| output rows
// are kept. strength == 0, w == 0 or gamma == 0 return v bitwise.
Mat gated_inject(const Mat& visual, const Mat& info,
                 const AttentionParams& params, const IEAConfig& cfg,
                 double strength = 1.0);

// Hard on/off sampling-interval schedule: full strength s1 while the run
// progress t/T is below s2, zero afterwards.
double schedule_active(int step_index, int total_steps, const IEAConfig& cfg);

// Flattens the explicit tokens, implicit tokens and offset groups (in that
// order) into one info sequence; rows are the d-dim token vectors.
Mat collect_info_tokens(const std::vector<InteractionTokens>& explicit_tokens,
                        const std::vector<ImplicitTokens>& implicit_tokens,
                        const std::vector<OffsetGroup>& offset_groups, Index d);

// One IEA layer application at sampling step `step_index` of `total_steps`.
Mat iea_forward(const Mat& visual,
                const std::vector<InteractionTokens>& explicit_tokens,
                const std::vector<ImplicitTokens>& implicit_tokens,
                const std::vector<OffsetGroup>& offset_groups,
                const AttentionParams& params, const IEAConfig& cfg,
                int step_index, int total_steps);

}  // namespace ceidm
