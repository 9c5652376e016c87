#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "winnow/graph.hpp"
#include "winnow/optim.hpp"

namespace winnow {

// Per-conv-layer filter masks (true = pruned). freeze=true is the hard
// variant: masked filters stay zero through any further training. freeze=false
// is the soft variant: weights are re-zeroed only at epoch ends and gradients
// keep flowing, so filters can recover.
struct PruneMask {
  std::map<std::string, std::vector<uint8_t>> filters;
  bool freeze = false;
};

int64_t count_pruned(const PruneMask& mask);

// Convs whose output channels are tied together by residual adds; members
// must be masked identically or the network breaks shape/function.
struct AlignmentGroup {
  std::vector<std::string> members;  // conv ids in graph order
  int64_t filter_count = 0;
  bool prunable = true;  // false when the group is tied to the stem/model input
};

// Channel-space representative for every layer: the id of the conv whose
// output channels the layer's output exposes ("" = raw model input space;
// layers after the classifier head live in its own fresh space).
std::map<std::string, std::string> channel_sources(const ModelGraph& model);

// Partition of all conv layers into alignment groups, in graph order.
// Groups containing the stem conv (or tied to raw input channels) are marked
// not prunable; the linear head is never part of any group.
std::vector<AlignmentGroup> compute_alignment_groups(const ModelGraph& model);

// l_p norm of each output filter of a [F,C,k,k] weight.
std::vector<double> filter_norm(const Tensor& weight, double p);

// Indices of the floor(rate * active) lowest-norm filters among those not
// already pruned; ties break toward the lowest index. Sorted ascending.
std::vector<int64_t> select_filters(const std::vector<double>& norms,
                                    double rate,
                                    const std::vector<uint8_t>& already_pruned);

// One hard round: per prunable group, selects `rate` of the remaining filters
// by summed group norm, extends the mask (freeze=true), zeroes the selected
// conv filters plus their BN gamma/beta/running stats, and clears those
// entries from the optimizer's moment buffers so stale momentum cannot move
// frozen weights later.
void hard_prune_round(ModelGraph& model, PruneMask& mask, double rate, double p,
                      Optimizer* optimizer = nullptr);

// Re-zeroes everything the mask covers: conv filter rows always; BN affine
// and running stats only for freeze masks (soft masks leave BN alive so
// zeroed filters can grow back — see README pruning notes).
void enforce_mask(ModelGraph& model, const PruneMask& mask);

// Zeroes the gradients of masked conv filters and their BN affine terms.
// Freeze-mode training loops call this between backward() and step().
void zero_masked_grads(ModelGraph& model, const PruneMask& mask);

struct AsfpSchedule {
  double target_rate = 0.3;  // in [0,1)
  int total_epochs = 60;
  double exponent = 3.0;
};

// target_rate * (1 - (1 - (epoch+1)/E)^exponent): strictly increasing in
// epoch and exactly target_rate at epoch E-1.
double asfp_rate(const AsfpSchedule& schedule, int epoch);

// Soft-pruning step run after the last optimizer step of `epoch`: recomputes
// group norms on the current weights, reselects asfp_rate(epoch) of ALL
// filters per prunable group (prior picks may escape), zeroes them, and
// returns the fresh mask (freeze=false).
PruneMask asfp_epoch_end(ModelGraph& model, const AsfpSchedule& schedule,
                         int epoch, double p);

// New model with masked filters physically removed: conv weights lose output
// rows and matching input channels, BN vectors shrink, the head loses input
// columns. Requires a group-consistent mask (InvariantError otherwise).
// Logits match the masked model (freeze-style zeroing applied) within 1e-5.
ModelGraph compact(const ModelGraph& model, const PruneMask& mask);

}  // namespace winnow
