#include "sgdet/sgalign.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <map>

#include "sgdet/errors.hpp"

namespace sgdet {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

void check_anchor(const Anchor& a, std::size_t length, std::size_t resolution) {
  if (resolution == 0) throw ContractError("interp_rescale: resolution must be >= 1");
  if (a.start >= a.end || a.end > length - 1) {
    throw ContractError("anchor (" + std::to_string(a.start) + ", " + std::to_string(a.end) +
                        ") outside [0, " + std::to_string(length - 1) + "]");
  }
}

// Linear interpolation weights at a fractional position, clamped to the sequence.
// Integral positions hit exactly one node.
template <typename Fn>
void interpolation_taps(double position, std::size_t length, Fn&& emit) {
  position = std::clamp(position, 0.0, static_cast<double>(length - 1));
  const double lower = std::floor(position);
  const double frac = position - lower;
  const auto lo = static_cast<std::size_t>(lower);
  if (frac == 0.0 || lo + 1 >= length) {
    emit(lo, 1.0);
  } else {
    emit(lo, 1.0 - frac);
    emit(lo + 1, frac);
  }
}

}  // namespace

std::vector<Anchor> enumerate_anchors(std::size_t length, std::size_t max_duration) {
  std::vector<Anchor> anchors;
  for (std::size_t s = 1; s < length; ++s)
    for (std::size_t e = s + 1; e < length && e - s < max_duration; ++e) anchors.push_back({s, e});
  return anchors;
}

std::vector<double> sample_positions(const Anchor& anchor, std::size_t resolution) {
  const std::size_t d = anchor.end - anchor.start;
  const std::size_t s = std::max<std::size_t>(1, d / resolution);
  const std::size_t total = resolution * s;
  std::vector<double> pos(total);
  for (std::size_t k = 0; k < total; ++k) {
    pos[k] = static_cast<double>(anchor.start) +
             static_cast<double>(k) * static_cast<double>(d) / static_cast<double>(total);
  }
  return pos;
}

Tensor interp_rescale(const Tensor& features, const Anchor& anchor, std::size_t resolution) {
  if (features.rank() != 2) {
    throw DimensionError("interp_rescale: features must be [C x L], got " +
                         shape_string(features.shape()));
  }
  const std::size_t channels = features.dim(0), length = features.dim(1);
  check_anchor(anchor, length, resolution);
  const auto x = features.data();
  const auto positions = sample_positions(anchor, resolution);
  const std::size_t per_bin = positions.size() / resolution;

  // Interpolated samples, one C-vector each.
  std::vector<std::vector<double>> samples;
  samples.reserve(positions.size());
  for (double p : positions) {
    std::vector<double> v(channels, 0.0);
    interpolation_taps(p, length, [&](std::size_t node, double w) {
      for (std::size_t c = 0; c < channels; ++c) v[c] += w * x[c * length + node];
    });
    samples.push_back(std::move(v));
  }

  std::vector<double> out(resolution * channels, 0.0);
  for (std::size_t k = 0; k < resolution; ++k) {
    for (std::size_t i = k * per_bin; i < (k + 1) * per_bin; ++i)
      for (std::size_t c = 0; c < channels; ++c) out[k * channels + c] += samples[i][c];
    for (std::size_t c = 0; c < channels; ++c)
      out[k * channels + c] /= static_cast<double>(per_bin);
  }
  return Tensor::from_vector({resolution * channels}, std::move(out));
}

PlanPtr make_sampling_plan(const std::vector<Anchor>& anchors, std::size_t length,
                           std::size_t resolution) {
  auto owned = std::make_shared<SamplingPlan>();
  SamplingPlan& plan = *owned;
  plan.length = length;
  plan.resolution = resolution;
  plan.anchors = anchors.size();
  plan.row_begin.reserve(anchors.size() * resolution + 1);
  plan.row_begin.push_back(0);
  std::map<std::size_t, double> bin;
  for (const auto& a : anchors) {
    check_anchor(a, length, resolution);
    const auto positions = sample_positions(a, resolution);
    const std::size_t per_bin = positions.size() / resolution;
    const double inv = 1.0 / static_cast<double>(per_bin);
    for (std::size_t k = 0; k < resolution; ++k) {
      bin.clear();
      for (std::size_t i = k * per_bin; i < (k + 1) * per_bin; ++i) {
        interpolation_taps(positions[i], length,
                           [&](std::size_t node, double w) { bin[node] += w * inv; });
      }
      for (const auto& [node, w] : bin) {
        plan.nodes.push_back(node);
        plan.weights.push_back(w);
      }
      plan.row_begin.push_back(plan.nodes.size());
    }
  }
  return owned;
}

Tensor apply_plan(const Tensor& features, const PlanPtr& plan_ptr) {
  const SamplingPlan& plan = *plan_ptr;
  if (features.rank() != 2 || features.dim(1) != plan.length) {
    throw DimensionError("apply_plan: plan built for length " + std::to_string(plan.length) +
                         ", features " + shape_string(features.shape()));
  }
  const std::size_t channels = features.dim(0), length = plan.length, tau = plan.resolution;
  const auto x = features.data();
  std::vector<double> out(plan.anchors * tau * channels, 0.0);
  for (std::size_t r = 0; r < plan.rows(); ++r) {
    double* dst = out.data() + r * channels;  // row r = anchor*tau + bin, laid out contiguously
    for (std::size_t e = plan.row_begin[r]; e < plan.row_begin[r + 1]; ++e) {
      const std::size_t node = plan.nodes[e];
      const double w = plan.weights[e];
      for (std::size_t c = 0; c < channels; ++c) dst[c] += w * x[c * length + node];
    }
  }
  return make_op_result({plan.anchors, tau * channels}, std::move(out), {features},
                        [plan_ptr, channels, length](detail::Node& self) {
                          const SamplingPlan& plan = *plan_ptr;
                          auto& g = self.inputs[0]->ensure_grad();
                          for (std::size_t r = 0; r < plan.rows(); ++r) {
                            const double* dy = self.grad.data() + r * channels;
                            for (std::size_t e = plan.row_begin[r]; e < plan.row_begin[r + 1];
                                 ++e) {
                              const std::size_t node = plan.nodes[e];
                              const double w = plan.weights[e];
                              for (std::size_t c = 0; c < channels; ++c)
                                g[c * length + node] += w * dy[c];
                            }
                          }
                        });
}

Tensor semantic_smooth(const Tensor& features, const EdgeList& edges) {
  if (features.rank() != 2) {
    throw DimensionError("semantic_smooth: features must be [C x L], got " +
                         shape_string(features.shape()));
  }
  return gather_mean(features, neighbor_table(edges, features.dim(1)));
}

Tensor sgalign_forward(const Tensor& features, const EdgeList& edges,
                       const std::vector<Anchor>& anchors, std::size_t tau1, std::size_t tau2) {
  const std::size_t length = features.dim(1);
  const auto temporal_plan = make_sampling_plan(anchors, length, tau1);
  Tensor temporal = apply_plan(features, temporal_plan);
  if (tau2 == 0) return temporal;
  const auto semantic_plan = make_sampling_plan(anchors, length, tau2);
  Tensor semantic = apply_plan(semantic_smooth(features, edges), semantic_plan);
  return concat({temporal, semantic}, 1);
}

namespace {

// Hidden columns are processed in chunks so that one chunk of the projected
// node features (tau x L x kChunk doubles) stays in L2 during the gather.
constexpr std::size_t kChunk = 64;

using ChunkVec = Eigen::Matrix<double, kChunk, 1>;
using DynVec = Eigen::Matrix<double, Eigen::Dynamic, 1>;

// out[j, h0:h0+w] = sum over plan entries of weight * projected[k][node][0:w]
// (accumulated into out) where projected is chunk-local, [tau][L][w]. Vec fixes w at compile time
// so the accumulator lives in registers.
template <typename Vec>
void gather_chunk(const SamplingPlan& plan, const double* projected, std::size_t w,
                  double* out, std::size_t out_stride) {
  const std::size_t length = plan.length, tau = plan.resolution;
  Vec acc(static_cast<Eigen::Index>(w));
  for (std::size_t j = 0; j < plan.anchors; ++j) {
    acc.setZero();
    for (std::size_t k = 0; k < tau; ++k) {
      const std::size_t r = j * tau + k;
      const double* block = projected + k * length * w;
      for (std::size_t e = plan.row_begin[r]; e < plan.row_begin[r + 1]; ++e) {
        acc.noalias() += plan.weights[e] *
                         Eigen::Map<const Vec>(block + plan.nodes[e] * w, acc.size());
      }
    }
    Eigen::Map<Vec>(out + j * out_stride, acc.size()) += acc;
  }
}

// Transpose of gather_chunk: d_projected[k][node][0:w] += weight * dy[j, h0:h0+w].
template <typename Vec>
void scatter_chunk(const SamplingPlan& plan, const double* dy, std::size_t dy_stride,
                   std::size_t w, double* d_projected) {
  const std::size_t length = plan.length, tau = plan.resolution;
  const auto n = static_cast<Eigen::Index>(w);
  for (std::size_t j = 0; j < plan.anchors; ++j) {
    const Vec g = Eigen::Map<const Vec>(dy + j * dy_stride, n);
    for (std::size_t k = 0; k < tau; ++k) {
      const std::size_t r = j * tau + k;
      double* block = d_projected + k * length * w;
      for (std::size_t e = plan.row_begin[r]; e < plan.row_begin[r + 1]; ++e) {
        Eigen::Map<Vec>(block + plan.nodes[e] * w, n).noalias() += plan.weights[e] * g;
      }
    }
  }
}

}  // namespace

Tensor aligned_projection(const Tensor& features, const PlanPtr& plan, const Tensor& weight,
                          std::size_t row_offset) {
  return aligned_projection(std::vector<ProjectionPart>{{features, plan, row_offset}}, weight);
}

Tensor aligned_projection(const std::vector<ProjectionPart>& parts, const Tensor& weight) {
  if (parts.empty()) throw ContractError("aligned_projection: no parts");
  if (weight.rank() != 2) {
    throw DimensionError("aligned_projection: weight must be 2-D, got " +
                         shape_string(weight.shape()));
  }
  const std::size_t anchors = parts.front().plan->anchors;
  const std::size_t hidden = weight.dim(1);
  struct Geometry {
    PlanPtr plan;
    std::size_t channels, length, tau, row_offset;
  };
  std::vector<Geometry> geo;
  std::vector<Tensor> inputs;
  for (const auto& part : parts) {
    const SamplingPlan& plan = *part.plan;
    const std::size_t channels = part.features.rank() == 2 ? part.features.dim(0) : 0;
    if (part.features.rank() != 2 || part.features.dim(1) != plan.length) {
      throw DimensionError("aligned_projection: plan built for length " +
                           std::to_string(plan.length) + ", features " +
                           shape_string(part.features.shape()));
    }
    if (plan.anchors != anchors) {
      throw DimensionError("aligned_projection: parts disagree on the anchor count");
    }
    if (weight.dim(0) < part.row_offset + plan.resolution * channels) {
      throw DimensionError("aligned_projection: weight " + shape_string(weight.shape()) +
                           " needs " + std::to_string(part.row_offset + plan.resolution * channels) +
                           " rows");
    }
    geo.push_back({part.plan, channels, plan.length, plan.resolution, part.row_offset});
    inputs.push_back(part.features);
  }
  inputs.push_back(weight);

  const ConstMap w_all(weight.data().data(), weight.dim(0), hidden);
  std::vector<double> out(anchors * hidden, 0.0);
  std::vector<double> projected;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Geometry& g = geo[p];
    const ConstMap x(parts[p].features.data().data(), g.channels, g.length);
    projected.resize(g.tau * g.length * kChunk);
    // Per-bin projected node features P_k = X^T W_k, one hidden chunk at a time.
    for (std::size_t h0 = 0; h0 < hidden; h0 += kChunk) {
      const std::size_t w = std::min(kChunk, hidden - h0);
      for (std::size_t k = 0; k < g.tau; ++k) {
        MutMap(projected.data() + k * g.length * w, g.length, w).noalias() =
            x.transpose() * w_all.block(g.row_offset + k * g.channels, h0, g.channels, w);
      }
      if (w == kChunk) {
        gather_chunk<ChunkVec>(*g.plan, projected.data(), w, out.data() + h0, hidden);
      } else {
        gather_chunk<DynVec>(*g.plan, projected.data(), w, out.data() + h0, hidden);
      }
    }
  }

  return make_op_result(
      {anchors, hidden}, std::move(out), std::move(inputs),
      [geo = std::move(geo), hidden](detail::Node& self) {
        auto& nw = *self.inputs.back();
        const std::size_t rows = nw.shape[0];
        const ConstMap wm(nw.data.data(), rows, hidden);
        std::vector<double> d_projected;
        for (std::size_t p = 0; p < geo.size(); ++p) {
          const Geometry& g = geo[p];
          auto& nx = *self.inputs[p];
          if (!nx.requires_grad && !nw.requires_grad) continue;
          const ConstMap xm(nx.data.data(), g.channels, g.length);
          d_projected.resize(g.tau * g.length * kChunk);
          for (std::size_t h0 = 0; h0 < hidden; h0 += kChunk) {
            const std::size_t w = std::min(kChunk, hidden - h0);
            std::fill(d_projected.begin(), d_projected.end(), 0.0);
            if (w == kChunk) {
              scatter_chunk<ChunkVec>(*g.plan, self.grad.data() + h0, hidden, w,
                                      d_projected.data());
            } else {
              scatter_chunk<DynVec>(*g.plan, self.grad.data() + h0, hidden, w,
                                    d_projected.data());
            }
            for (std::size_t k = 0; k < g.tau; ++k) {
              const ConstMap dp(d_projected.data() + k * g.length * w, g.length, w);
              if (nw.requires_grad) {
                MutMap(nw.ensure_grad().data(), rows, hidden)
                    .block(g.row_offset + k * g.channels, h0, g.channels, w)
                    .noalias() += xm * dp;
              }
              if (nx.requires_grad) {
                MutMap(nx.ensure_grad().data(), g.channels, g.length).noalias() +=
                    wm.block(g.row_offset + k * g.channels, h0, g.channels, w) * dp.transpose();
              }
            }
          }
        }
      });
}

}  // namespace sgdet
