#include "pairforge/losses.hpp"

#include <numeric>

#include "pairforge/ops.hpp"

namespace pf {

namespace {

void require_positive(double tau, const char* what) {
  if (!(tau > 0.0)) throw ContractError(std::string(what) + " must be positive, got " + std::to_string(tau));
}

}  // namespace

Tensor symmetric_contrastive(const Tensor& scores, double tau, bool literal_sign) {
  require_positive(tau, "temperature");
  if (scores.rank() != 2 || scores.dim(0) != scores.dim(1)) {
    throw DimensionError("contrastive scores must be square, got " + shape_str(scores.shape()));
  }
  const std::size_t B = scores.dim(0);
  std::vector<std::size_t> diag(B);
  std::iota(diag.begin(), diag.end(), 0);
  const Tensor logits = scale(scores, (literal_sign ? -1.0 : 1.0) / tau);
  return scale(add(cross_entropy(logits, diag), cross_entropy(transpose(logits), diag)), 0.5);
}

Tensor infonce(const Tensor& v, const Tensor& t, double tau, bool literal_sign) {
  require_positive(tau, "temperature");
  if (v.rank() != 2 || v.shape() != t.shape()) {
    throw DimensionError("infonce expects equal [B,E] inputs, got " + shape_str(v.shape()) + " and " +
                         shape_str(t.shape()));
  }
  return symmetric_contrastive(matmul_nt(v, t), tau, literal_sign);
}

Tensor gloria_attention(const Tensor& s, double tau2) {
  require_positive(tau2, "tau2");
  if (s.rank() != 2) throw DimensionError("gloria_attention expects [W,M], got " + shape_str(s.shape()));
  return softmax(scale(s, 1.0 / tau2), 1);
}

Tensor gloria_match(const Tensor& v_local, const Tensor& t_local, double tau2, double tau3) {
  require_positive(tau3, "tau3");
  if (v_local.rank() != 2 || t_local.rank() != 2 || v_local.dim(1) != t_local.dim(1)) {
    throw DimensionError("gloria_match expects [M,E] and [W,E], got " + shape_str(v_local.shape()) + " and " +
                         shape_str(t_local.shape()));
  }
  const Tensor a = gloria_attention(matmul_nt(t_local, v_local), tau2);
  const Tensor c = matmul(a, v_local);
  const Tensor d = sum(mul(c, t_local), 1);
  return scale(logsumexp(scale(d, 1.0 / tau3), 0), tau3);
}

Tensor gloria_scores(const Tensor& v_local, const Tensor& t_local, const std::vector<std::size_t>& lengths,
                     double tau2, double tau3) {
  require_positive(tau2, "tau2");
  require_positive(tau3, "tau3");
  if (v_local.rank() != 3 || t_local.rank() != 2 || v_local.dim(2) != t_local.dim(1)) {
    throw DimensionError("gloria_scores expects [B,M,E] and [sumW,E], got " + shape_str(v_local.shape()) +
                         " and " + shape_str(t_local.shape()));
  }
  const std::size_t B = v_local.dim(0), T = lengths.size(), R = t_local.dim(0), E = t_local.dim(1);
  if (T == 0 || std::accumulate(lengths.begin(), lengths.end(), std::size_t{0}) != R) {
    throw DimensionError("gloria_scores: word counts do not match the text rows");
  }
  for (auto w : lengths)
    if (w == 0) throw ContractError("gloria_scores: every report needs at least one word");
  // Every image attends over the words of every report in one batched product.
  const Tensor t_rep = reshape(concat(std::vector<Tensor>(B, t_local)), {B, R, E});
  const Tensor a = softmax(scale(bmm_nt(t_rep, v_local), 1.0 / tau2), 2);  // [B, R, M]
  const Tensor c = bmm(a, v_local);                                        // [B, R, E]
  const Tensor d = reshape(sum(mul(c, t_rep), 2), {B * R});
  std::vector<std::size_t> seg;
  seg.reserve(B * T);
  for (std::size_t k = 0; k < B; ++k) seg.insert(seg.end(), lengths.begin(), lengths.end());
  return reshape(scale(segment_logsumexp(scale(d, 1.0 / tau3), seg), tau3), {B, T});
}

Tensor gloria_loss(const BatchEmbeddings& batch, const LossConfig& cfg) {
  return symmetric_contrastive(gloria_scores(batch.v_local, batch.t_local, batch.t_lengths, cfg.tau2, cfg.tau3),
                               cfg.tau, cfg.literal_sign);
}

Tensor infonce_loss(const BatchEmbeddings& batch, const LossConfig& cfg) {
  return infonce(batch.v_global, batch.t_global, cfg.tau, cfg.literal_sign);
}

Tensor combined_loss(const BatchEmbeddings& batch, const LossConfig& cfg) {
  return add(infonce_loss(batch, cfg), gloria_loss(batch, cfg));
}

Tensor pair_loss(LossKind kind, const BatchEmbeddings& batch, const LossConfig& cfg) {
  switch (kind) {
    case LossKind::InfoNCE: return infonce_loss(batch, cfg);
    case LossKind::Gloria: return gloria_loss(batch, cfg);
    case LossKind::Combined: break;
  }
  return combined_loss(batch, cfg);
}

std::string loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::InfoNCE: return "infonce";
    case LossKind::Gloria: return "gloria";
    case LossKind::Combined: break;
  }
  return "combined";
}

LossKind parse_loss_kind(const std::string& name) {
  if (name == "infonce") return LossKind::InfoNCE;
  if (name == "gloria") return LossKind::Gloria;
  if (name == "combined") return LossKind::Combined;
  throw ContractError("unknown loss '" + name + "' (expected infonce, gloria or combined)");
}

}  // namespace pf
