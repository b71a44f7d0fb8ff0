#pragma once

// Knowledge selection and filtering. A gate unit maps the flattened knowledge
// matrix together with the (gradient-blocked) feature embedding to one weight
// per chunk per knowledge field, and every element of a chunk is scaled by
// that chunk's weight.

#include "kser/autograd.hpp"
#include "kser/knowledge.hpp"
#include "kser/nn.hpp"

#include <span>
#include <vector>

namespace kser {

struct EsfnetConfig {
  int chunks = 4;
  double kappa = 2.0;
  /// 0 selects max(16, gate input width / 4).
  int gate_hidden = 0;
};

int default_gate_hidden(int gate_input_width);

/// Gate unit: w = kappa * sigmoid(relu(z W1 + b1) W2 + b2).
struct GateParams {
  Dense hidden;  // W1, b1
  Dense output;  // W2, b2; output width C * L
  double kappa = 2.0;
};

/// C x L chunk weights, entry (c, j) for chunk c of knowledge field j.
struct GateWeights {
  Mat values;

  int chunks() const { return static_cast<int>(values.rows()); }
  int num_fields() const { return static_cast<int>(values.cols()); }
};

/// Filtered knowledge (d_k x L).
struct FilteredKnowledge {
  Mat values;
};

class Esfnet {
 public:
  Esfnet() = default;
  Esfnet(int dk, int num_fields, int feat_width, const EsfnetConfig& cfg, Rng& rng);

  struct Output {
    Var filtered;  // B x (L*d_k), field-major like the input
    Var weights;   // B x (C*L), field-major: column j*C + c
  };

  /// knowledge: B x (L*d_k) rows of vec(k_i); feat: B x d_e.
  Output forward(Graph& g, Var knowledge, Var feat);

  GateParams& gate() { return gate_; }
  const GateParams& gate() const { return gate_; }
  int dk() const { return dk_; }
  int num_fields() const { return num_fields_; }
  int chunks() const { return chunks_; }
  int feat_width() const { return feat_width_; }

  void collect(std::vector<Parameter*>& out);

 private:
  GateParams gate_;
  int dk_ = 0;
  int num_fields_ = 0;
  int chunks_ = 1;
  int feat_width_ = 0;
};

// ---- graph-level building blocks -------------------------------------------------

/// vec(k) concatenated with the feature embedding; the feature part is detached.
Var gate_input(Var knowledge, Var feat);
/// B x (C*L) gate output for inputs z.
Var gate_weights(Graph& g, Var z, GateParams& gate);
/// Broadcast each chunk weight over its chunk_size elements and multiply.
Var apply_weights(Var knowledge, Var weights, int chunk_size);

// ---- single-sample forms -----------------------------------------------------------

/// Column-major flatten of k followed by `feat`. Throws on empty feat.
std::vector<double> gate_input(const KnowledgeMatrix& k, std::span<const double> feat);

/// Gate weights reshaped field-major into C x L.
GateWeights gate_weights(std::span<const double> z, GateParams& gate, int chunks, int num_fields);

/// Entry (r, j) = k(r, j) * w(r / s, j) with s = d_k / C.
FilteredKnowledge apply_weights(const KnowledgeMatrix& k, const GateWeights& w);

struct EsfnetResult {
  FilteredKnowledge filtered;
  GateWeights weights;
};

EsfnetResult esfnet_forward(const KnowledgeMatrix& k, std::span<const double> feat, Esfnet& net);

}  // namespace kser
