#include "winnow/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <set>

#include "winnow/errors.hpp"

namespace winnow {

namespace {

struct Dsu {
  std::map<std::string, std::string> parent;

  void ensure(const std::string& id) {
    if (!parent.count(id)) parent[id] = id;
  }
  std::string find(const std::string& id) {
    std::string root = id;
    while (parent.at(root) != root) root = parent.at(root);
    // path compression
    std::string cur = id;
    while (parent.at(cur) != root) {
      std::string next = parent.at(cur);
      parent[cur] = root;
      cur = next;
    }
    return root;
  }
  void unite(const std::string& a, const std::string& b) {
    const std::string ra = find(a), rb = find(b);
    if (ra != rb) parent[rb] = ra;
  }
};

struct SourceAnalysis {
  std::map<std::string, std::string> source;  // layer -> conv id or ""
  Dsu dsu;
  std::set<std::string> input_tied;  // convs whose space fuses with raw input
};

SourceAnalysis analyze_sources(const ModelGraph& model) {
  SourceAnalysis a;
  auto src_of = [&](const LayerSpec& l, size_t which) -> std::string {
    return l.inputs.empty() ? std::string() : a.source.at(l.inputs[which]);
  };
  for (const auto& l : model.layers()) {
    switch (l.kind) {
      case LayerKind::kConv:
        a.dsu.ensure(l.id);
        a.source[l.id] = l.id;
        break;
      case LayerKind::kBn:
      case LayerKind::kRelu:
      case LayerKind::kMaxpool:
      case LayerKind::kGap:
        a.source[l.id] = src_of(l, 0);
        break;
      case LayerKind::kLinear:
        a.source[l.id] = "";
        break;
      case LayerKind::kAdd: {
        const std::string sa = src_of(l, 0);
        const std::string sb = src_of(l, 1);
        if (sa.empty() && sb.empty()) {
          a.source[l.id] = "";
        } else if (sa.empty()) {
          a.input_tied.insert(sb);
          a.source[l.id] = sb;
        } else if (sb.empty()) {
          a.input_tied.insert(sa);
          a.source[l.id] = sa;
        } else {
          a.dsu.unite(sa, sb);
          a.source[l.id] = a.dsu.find(sa);
        }
        break;
      }
    }
  }
  return a;
}

// Shared mask consistency: every key a conv with a length-F vector, group
// members carrying identical vectors (a missing entry counts as all-false).
void validate_mask(const ModelGraph& model, const PruneMask& mask,
                   const std::vector<AlignmentGroup>& groups) {
  for (const auto& [id, m] : mask.filters) {
    if (!model.has_layer(id) || model.layer(id).kind != LayerKind::kConv) {
      throw ShapeError("mask entry '" + id + "' is not a conv layer");
    }
    if (static_cast<int64_t>(m.size()) != model.layer(id).f) {
      throw ShapeError("mask for '" + id + "' has " +
                       std::to_string(m.size()) + " entries, layer has " +
                       std::to_string(model.layer(id).f) + " filters");
    }
  }
  for (const auto& g : groups) {
    const std::vector<uint8_t> zeros(static_cast<size_t>(g.filter_count), 0);
    auto effective = [&](const std::string& id) -> const std::vector<uint8_t>& {
      auto it = mask.filters.find(id);
      return it == mask.filters.end() ? zeros : it->second;
    };
    for (size_t i = 1; i < g.members.size(); ++i) {
      if (effective(g.members[i]) != effective(g.members.front())) {
        throw InvariantError("mask differs across alignment group: '" +
                             g.members.front() + "' vs '" + g.members[i] + "'");
      }
    }
  }
}

const LayerSpec* bn_consumer(const ModelGraph& model, const std::string& conv_id) {
  for (const auto& cid : model.consumers(conv_id)) {
    const LayerSpec& l = model.layer(cid);
    if (l.kind == LayerKind::kBn) return &l;
  }
  return nullptr;
}

void zero_rows(Tensor& weight, const std::vector<uint8_t>& mask) {
  const int64_t rows = weight.dim(0);
  const int64_t row_elems = weight.numel() / rows;
  float* w = weight.mutable_data().data();
  for (int64_t f = 0; f < rows; ++f) {
    if (mask[static_cast<size_t>(f)]) {
      std::memset(w + f * row_elems, 0,
                  sizeof(float) * static_cast<size_t>(row_elems));
    }
  }
}

void zero_elems(Tensor& vec, const std::vector<uint8_t>& mask) {
  float* v = vec.mutable_data().data();
  for (size_t f = 0; f < mask.size(); ++f) {
    if (mask[f]) v[f] = 0.0f;
  }
}

void zero_grad_rows(Tensor& t, const std::vector<uint8_t>& mask) {
  if (!t.has_grad()) return;
  const int64_t rows = t.dim(0);
  const int64_t row_elems = t.numel() / rows;
  float* g = t.mutable_grad().data();
  for (int64_t f = 0; f < rows; ++f) {
    if (mask[static_cast<size_t>(f)]) {
      std::memset(g + f * row_elems, 0,
                  sizeof(float) * static_cast<size_t>(row_elems));
    }
  }
}

void zero_moment_rows(Optimizer& opt, const Tensor& t,
                      const std::vector<uint8_t>& mask) {
  const int64_t rows = t.dim(0);
  const int64_t row_elems = t.numel() / rows;
  for (auto span : opt.state_for(t)) {
    for (int64_t f = 0; f < rows; ++f) {
      if (mask[static_cast<size_t>(f)]) {
        std::memset(span.data() + f * row_elems, 0,
                    sizeof(float) * static_cast<size_t>(row_elems));
      }
    }
  }
}

}  // namespace

int64_t count_pruned(const PruneMask& mask) {
  int64_t n = 0;
  for (const auto& [id, m] : mask.filters) {
    n += std::count(m.begin(), m.end(), uint8_t{1});
  }
  return n;
}

std::map<std::string, std::string> channel_sources(const ModelGraph& model) {
  SourceAnalysis a = analyze_sources(model);
  std::map<std::string, std::string> out;
  for (const auto& [layer, src] : a.source) {
    out[layer] = src.empty() ? src : a.dsu.find(src);
  }
  return out;
}

std::vector<AlignmentGroup> compute_alignment_groups(const ModelGraph& model) {
  SourceAnalysis a = analyze_sources(model);

  std::set<std::string> tied_roots;
  for (const auto& id : a.input_tied) tied_roots.insert(a.dsu.find(id));

  std::map<std::string, size_t> root_to_group;
  std::vector<AlignmentGroup> groups;
  for (const auto& l : model.layers()) {
    if (l.kind != LayerKind::kConv) continue;
    const std::string root = a.dsu.find(l.id);
    auto it = root_to_group.find(root);
    if (it == root_to_group.end()) {
      root_to_group[root] = groups.size();
      AlignmentGroup g;
      g.filter_count = l.f;
      g.prunable = !tied_roots.count(root);
      g.members.push_back(l.id);
      groups.push_back(std::move(g));
      it = root_to_group.find(root);
    } else {
      AlignmentGroup& g = groups[it->second];
      if (g.filter_count != l.f) {
        throw InvariantError("alignment group mixes filter counts: '" +
                             g.members.front() + "' has " +
                             std::to_string(g.filter_count) + ", '" + l.id +
                             "' has " + std::to_string(l.f));
      }
      g.members.push_back(l.id);
    }
    if (l.inputs.empty()) groups[root_to_group[root]].prunable = false;
  }
  // A later member reading the model input must also poison the whole group.
  for (auto& g : groups) {
    for (const auto& m : g.members) {
      if (model.layer(m).inputs.empty()) g.prunable = false;
    }
  }
  return groups;
}

std::vector<double> filter_norm(const Tensor& weight, double p) {
  if (p <= 0.0) throw ConfigError("filter norm exponent must be positive");
  if (weight.rank() != 4) {
    throw ShapeError("filter_norm expects [F,C,k,k], got " +
                     shape_str(weight.shape()));
  }
  const int64_t f = weight.dim(0);
  const int64_t row = weight.numel() / f;
  const float* w = weight.data().data();
  std::vector<double> norms(static_cast<size_t>(f));
  for (int64_t i = 0; i < f; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < row; ++j) {
      s += std::pow(std::fabs(static_cast<double>(w[i * row + j])), p);
    }
    norms[static_cast<size_t>(i)] = std::pow(s, 1.0 / p);
  }
  return norms;
}

std::vector<int64_t> select_filters(const std::vector<double>& norms,
                                    double rate,
                                    const std::vector<uint8_t>& already_pruned) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("pruning rate must lie in [0,1)");
  }
  if (norms.size() != already_pruned.size()) {
    throw ShapeError("select_filters: " + std::to_string(norms.size()) +
                     " norms vs " + std::to_string(already_pruned.size()) +
                     " mask entries");
  }
  std::vector<int64_t> active;
  for (size_t i = 0; i < norms.size(); ++i) {
    if (!already_pruned[i]) active.push_back(static_cast<int64_t>(i));
  }
  const auto n_select = static_cast<int64_t>(
      std::floor(rate * static_cast<double>(active.size())));
  if (n_select <= 0) return {};
  std::sort(active.begin(), active.end(), [&](int64_t a, int64_t b) {
    const double na = norms[static_cast<size_t>(a)];
    const double nb = norms[static_cast<size_t>(b)];
    if (na != nb) return na < nb;
    return a < b;  // tie -> lowest index
  });
  std::vector<int64_t> out(active.begin(), active.begin() + n_select);
  std::sort(out.begin(), out.end());
  return out;
}

void enforce_mask(ModelGraph& model, const PruneMask& mask) {
  const auto groups = compute_alignment_groups(model);
  validate_mask(model, mask, groups);
  for (const auto& [id, m] : mask.filters) {
    if (std::find(m.begin(), m.end(), uint8_t{1}) == m.end()) continue;
    Tensor& w = model.param(id + ".weight");
    zero_rows(w, m);
    if (mask.freeze) {
      zero_grad_rows(w, m);
      if (const LayerSpec* bn = bn_consumer(model, id)) {
        for (const char* sfx :
             {".gamma", ".beta", ".running_mean", ".running_var"}) {
          Tensor& v = model.param(bn->id + sfx);
          zero_elems(v, m);
          zero_grad_rows(v, m);
        }
      }
    }
  }
}

void zero_masked_grads(ModelGraph& model, const PruneMask& mask) {
  for (const auto& [id, m] : mask.filters) {
    if (std::find(m.begin(), m.end(), uint8_t{1}) == m.end()) continue;
    zero_grad_rows(model.param(id + ".weight"), m);
    if (const LayerSpec* bn = bn_consumer(model, id)) {
      zero_grad_rows(model.param(bn->id + ".gamma"), m);
      zero_grad_rows(model.param(bn->id + ".beta"), m);
    }
  }
}

void hard_prune_round(ModelGraph& model, PruneMask& mask, double rate, double p,
                      Optimizer* optimizer) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("pruning rate must lie in [0,1)");
  }
  if (rate == 0.0) return;  // nothing to select, mask and weights untouched

  const auto groups = compute_alignment_groups(model);
  validate_mask(model, mask, groups);

  // Every conv gets an explicit row, so an all-zero entry records "considered
  // and exempt" (unprunable group or empty selection) rather than "missed".
  for (const auto& g : groups) {
    std::vector<int64_t> selected;
    if (g.prunable) {
      std::vector<double> norms(static_cast<size_t>(g.filter_count), 0.0);
      for (const auto& member : g.members) {
        const auto n = filter_norm(model.param(member + ".weight"), p);
        for (size_t i = 0; i < n.size(); ++i) norms[i] += n[i];
      }
      std::vector<uint8_t> already(static_cast<size_t>(g.filter_count), 0);
      auto it = mask.filters.find(g.members.front());
      if (it != mask.filters.end()) already = it->second;
      selected = select_filters(norms, rate, already);
    }
    for (const auto& member : g.members) {
      auto& m = mask.filters[member];
      if (m.empty()) m.assign(static_cast<size_t>(g.filter_count), 0);
      for (int64_t f : selected) m[static_cast<size_t>(f)] = 1;
    }
  }

  mask.freeze = true;
  enforce_mask(model, mask);

  if (optimizer) {
    for (const auto& [id, m] : mask.filters) {
      if (std::find(m.begin(), m.end(), uint8_t{1}) == m.end()) continue;
      zero_moment_rows(*optimizer, model.param(id + ".weight"), m);
      if (const LayerSpec* bn = bn_consumer(model, id)) {
        zero_moment_rows(*optimizer, model.param(bn->id + ".gamma"), m);
        zero_moment_rows(*optimizer, model.param(bn->id + ".beta"), m);
      }
    }
  }
}

double asfp_rate(const AsfpSchedule& schedule, int epoch) {
  if (schedule.total_epochs < 1) {
    throw ConfigError("asfp schedule needs total_epochs >= 1");
  }
  if (!(schedule.target_rate >= 0.0 && schedule.target_rate < 1.0)) {
    throw ConfigError("asfp target rate must lie in [0,1)");
  }
  if (schedule.exponent <= 0.0) {
    throw ConfigError("asfp exponent must be positive");
  }
  if (epoch < 0 || epoch >= schedule.total_epochs) {
    throw ConfigError("asfp epoch " + std::to_string(epoch) +
                      " outside [0," + std::to_string(schedule.total_epochs) +
                      ")");
  }
  const double frac = static_cast<double>(epoch + 1) /
                      static_cast<double>(schedule.total_epochs);
  return schedule.target_rate * (1.0 - std::pow(1.0 - frac, schedule.exponent));
}

PruneMask asfp_epoch_end(ModelGraph& model, const AsfpSchedule& schedule,
                         int epoch, double p) {
  const double rate = asfp_rate(schedule, epoch);
  PruneMask mask;
  mask.freeze = false;
  const auto groups = compute_alignment_groups(model);
  for (const auto& g : groups) {
    std::vector<int64_t> selected;
    if (g.prunable) {
      std::vector<double> norms(static_cast<size_t>(g.filter_count), 0.0);
      for (const auto& member : g.members) {
        const auto n = filter_norm(model.param(member + ".weight"), p);
        for (size_t i = 0; i < n.size(); ++i) norms[i] += n[i];
      }
      const std::vector<uint8_t> none(static_cast<size_t>(g.filter_count), 0);
      selected = select_filters(norms, rate, none);
    }
    for (const auto& member : g.members) {
      auto& m = mask.filters[member];
      m.assign(static_cast<size_t>(g.filter_count), 0);
      for (int64_t f : selected) m[static_cast<size_t>(f)] = 1;
    }
  }
  enforce_mask(model, mask);
  return mask;
}

ModelGraph compact(const ModelGraph& model, const PruneMask& mask) {
  const auto groups = compute_alignment_groups(model);
  validate_mask(model, mask, groups);
  const auto sources = channel_sources(model);

  // Surviving output channels per conv.
  std::map<std::string, std::vector<int64_t>> keep;
  for (const auto& l : model.layers()) {
    if (l.kind != LayerKind::kConv) continue;
    std::vector<int64_t> k;
    auto it = mask.filters.find(l.id);
    for (int64_t f = 0; f < l.f; ++f) {
      if (it == mask.filters.end() || !it->second[static_cast<size_t>(f)]) {
        k.push_back(f);
      }
    }
    if (k.empty()) {
      throw InvariantError("compact would leave conv '" + l.id +
                           "' with zero filters");
    }
    keep[l.id] = std::move(k);
  }

  auto keep_of_space = [&](const std::string& src,
                           int64_t fallback_extent) -> std::vector<int64_t> {
    if (src.empty()) {
      std::vector<int64_t> all(static_cast<size_t>(fallback_extent));
      std::iota(all.begin(), all.end(), 0);
      return all;
    }
    return keep.at(src);
  };
  auto input_space = [&](const LayerSpec& l) -> std::string {
    return l.inputs.empty() ? std::string() : sources.at(l.inputs[0]);
  };

  ModelGraph out;
  out.meta = model.meta;

  for (const auto& l : model.layers()) {
    switch (l.kind) {
      case LayerKind::kConv: {
        const auto keep_in = keep_of_space(input_space(l), l.c);
        const auto& keep_out = keep.at(l.id);
        LayerSpec nl = l;
        nl.f = static_cast<int64_t>(keep_out.size());
        nl.c = static_cast<int64_t>(keep_in.size());
        out.add_layer(nl);

        const Tensor& w = model.param(l.id + ".weight");
        const float* src = w.data().data();
        const int64_t kk = l.k * l.k;
        std::vector<float> nw(static_cast<size_t>(nl.f * nl.c * kk));
        for (size_t fo = 0; fo < keep_out.size(); ++fo) {
          for (size_t ci = 0; ci < keep_in.size(); ++ci) {
            std::memcpy(nw.data() + (static_cast<int64_t>(fo) * nl.c +
                                     static_cast<int64_t>(ci)) * kk,
                        src + (keep_out[fo] * l.c + keep_in[ci]) * kk,
                        sizeof(float) * static_cast<size_t>(kk));
          }
        }
        out.set_param(l.id + ".weight",
                      Tensor::from_data({nl.f, nl.c, l.k, l.k}, std::move(nw)));
        break;
      }
      case LayerKind::kBn: {
        const auto keep_v = keep_of_space(input_space(l), l.c);
        LayerSpec nl = l;
        nl.c = static_cast<int64_t>(keep_v.size());
        out.add_layer(nl);
        for (const char* sfx :
             {".gamma", ".beta", ".running_mean", ".running_var"}) {
          const float* src = model.param(l.id + sfx).data().data();
          std::vector<float> nv(keep_v.size());
          for (size_t i = 0; i < keep_v.size(); ++i) {
            nv[i] = src[keep_v[i]];
          }
          out.set_param(l.id + sfx,
                        Tensor::from_data({nl.c}, std::move(nv)));
        }
        break;
      }
      case LayerKind::kLinear: {
        const std::string src = input_space(l);
        if (src.empty()) {
          out.add_layer(l);
          out.set_param(l.id + ".weight", model.param(l.id + ".weight").clone());
          out.set_param(l.id + ".bias", model.param(l.id + ".bias").clone());
          break;
        }
        if (model.layer(src).f != l.c) {
          throw InvariantError(
              "cannot compact head '" + l.id +
              "': input features are not 1:1 with channels of '" + src + "'");
        }
        const auto& keep_v = keep.at(src);
        LayerSpec nl = l;
        nl.c = static_cast<int64_t>(keep_v.size());
        out.add_layer(nl);
        const Tensor& w = model.param(l.id + ".weight");
        const float* srcw = w.data().data();
        std::vector<float> nw(static_cast<size_t>(l.f) * keep_v.size());
        for (int64_t r = 0; r < l.f; ++r) {
          for (size_t ci = 0; ci < keep_v.size(); ++ci) {
            nw[static_cast<size_t>(r) * keep_v.size() + ci] =
                srcw[r * l.c + keep_v[ci]];
          }
        }
        out.set_param(l.id + ".weight",
                      Tensor::from_data({l.f, nl.c}, std::move(nw)));
        out.set_param(l.id + ".bias", model.param(l.id + ".bias").clone());
        break;
      }
      default:
        out.add_layer(l);
        break;
    }
  }
  out.finalize();
  return out;
}

}  // namespace winnow
