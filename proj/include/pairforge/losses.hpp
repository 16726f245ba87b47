#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "pairforge/tensor.hpp"

namespace pf {

struct LossConfig {
  double tau = 0.5;   // global / pair-score temperature
  double tau2 = 0.5;  // word-to-region attention temperature
  double tau3 = 0.5;  // local match aggregation temperature
  /// Score matched pairs with exp(-s/tau) instead of exp(+s/tau). Only useful
  /// to show that this variant pushes matched pairs apart.
  bool literal_sign = false;
};

/// Embeddings of a batch of B pairs. Rows are expected to be unit-norm.
struct BatchEmbeddings {
  Tensor v_global;                   // [B, E]
  Tensor t_global;                   // [B, E]
  Tensor v_local;                    // [B, M, E]
  Tensor t_local;                    // [sum W_b, E], sample b's words consecutive
  std::vector<std::size_t> t_lengths;  // W_b
  std::size_t batch_size() const { return v_global.dim(0); }
};

/// Symmetric cross-entropy over a [B,B] score matrix whose diagonal holds the
/// matched pairs, averaged over both directions and all B rows.
Tensor symmetric_contrastive(const Tensor& scores, double tau, bool literal_sign = false);

/// Global image-text contrastive loss on [B,E] embeddings.
Tensor infonce(const Tensor& v, const Tensor& t, double tau, bool literal_sign = false);

/// Row-wise softmax of word-region similarities S[W,M] / tau2.
Tensor gloria_attention(const Tensor& s, double tau2);

/// Local match score of one image (regions [M,E]) and one report (words [W,E]).
Tensor gloria_match(const Tensor& v_local, const Tensor& t_local, double tau2, double tau3);

/// Local scores of every image against every report: [B,T] for B images and
/// T = lengths.size() reports, rows indexed by image.
Tensor gloria_scores(const Tensor& v_local, const Tensor& t_local, const std::vector<std::size_t>& lengths,
                     double tau2, double tau3);

Tensor gloria_loss(const BatchEmbeddings& batch, const LossConfig& cfg = {});
Tensor infonce_loss(const BatchEmbeddings& batch, const LossConfig& cfg = {});
/// Unweighted sum of the global and local losses.
Tensor combined_loss(const BatchEmbeddings& batch, const LossConfig& cfg = {});

enum class LossKind { InfoNCE, Gloria, Combined };

std::string loss_kind_name(LossKind kind);
/// Parses "infonce", "gloria" or "combined"; throws ContractError otherwise.
LossKind parse_loss_kind(const std::string& name);
Tensor pair_loss(LossKind kind, const BatchEmbeddings& batch, const LossConfig& cfg = {});

}  // namespace pf
