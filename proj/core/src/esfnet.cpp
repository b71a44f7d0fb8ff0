#include "kser/esfnet.hpp"

#include "kser/error.hpp"

#include <algorithm>
#include <string>

namespace kser {

int default_gate_hidden(int gate_input_width) { return std::max(16, gate_input_width / 4); }

Esfnet::Esfnet(int dk, int num_fields, int feat_width, const EsfnetConfig& cfg, Rng& rng)
    : dk_(dk), num_fields_(num_fields), chunks_(cfg.chunks), feat_width_(feat_width) {
  if (cfg.chunks < 1 || dk % cfg.chunks != 0)
    throw ValidationError("esfnet.chunks = " + std::to_string(cfg.chunks) + " must divide d_k = " +
                          std::to_string(dk));
  if (!(cfg.kappa > 0)) throw ValidationError("esfnet.kappa must be positive");
  if (feat_width < 1) throw ValidationError("feature embedding width must be at least 1");
  const int in = dk * num_fields + feat_width;
  const int hidden = cfg.gate_hidden > 0 ? cfg.gate_hidden : default_gate_hidden(in);
  gate_.hidden = Dense("esfnet.gate1", in, hidden, rng);
  gate_.output = Dense("esfnet.gate2", hidden, static_cast<long>(cfg.chunks) * num_fields, rng);
  gate_.kappa = cfg.kappa;
}

void Esfnet::collect(std::vector<Parameter*>& out) {
  gate_.hidden.collect(out);
  gate_.output.collect(out);
}

Esfnet::Output Esfnet::forward(Graph& g, Var knowledge, Var feat) {
  if (knowledge.cols() != static_cast<long>(dk_) * num_fields_ || feat.cols() != feat_width_)
    throw DataError("esfnet input width mismatch");
  const Var w = gate_weights(g, gate_input(knowledge, feat), gate_);
  return {apply_weights(knowledge, w, dk_ / chunks_), w};
}

Var gate_input(Var knowledge, Var feat) {
  if (feat.cols() < 1) throw DataError("gate input needs a non-empty feature embedding");
  const Var parts[] = {knowledge, detach(feat)};
  return concat_cols(parts);
}

Var gate_weights(Graph& g, Var z, GateParams& gate) {
  if (z.cols() != gate.hidden.in_width())
    throw DataError("gate input width " + std::to_string(z.cols()) + " does not match W1 rows " +
                    std::to_string(gate.hidden.in_width()));
  return scale(sigmoid(gate.output(g, relu(gate.hidden(g, z)))), gate.kappa);
}

Var apply_weights(Var knowledge, Var weights, int chunk_size) {
  if (weights.cols() * chunk_size != knowledge.cols()) throw DataError("chunk weights do not cover the knowledge");
  return mul(knowledge, repeat_cols(weights, chunk_size));
}

std::vector<double> gate_input(const KnowledgeMatrix& k, std::span<const double> feat) {
  if (feat.empty()) throw DataError("gate input needs a non-empty feature embedding");
  std::vector<double> z(k.data.begin(), k.data.end());
  z.insert(z.end(), feat.begin(), feat.end());
  return z;
}

GateWeights gate_weights(std::span<const double> z, GateParams& gate, int chunks, int num_fields) {
  if (gate.output.out_width() != static_cast<long>(chunks) * num_fields)
    throw DataError("gate output width is not C * L");
  Graph g;
  Mat zm(1, static_cast<long>(z.size()));
  std::copy(z.begin(), z.end(), zm.data());
  const Var w = gate_weights(g, g.constant(std::move(zm)), gate);
  GateWeights out{Mat(chunks, num_fields)};
  for (int j = 0; j < num_fields; ++j)
    for (int c = 0; c < chunks; ++c) out.values(c, j) = w.value()(0, j * chunks + c);
  return out;
}

FilteredKnowledge apply_weights(const KnowledgeMatrix& k, const GateWeights& w) {
  if (w.num_fields() != k.num_fields || w.chunks() < 1 || k.dk % w.chunks() != 0)
    throw DataError("gate weights shape does not match the knowledge matrix");
  const int s = k.dk / w.chunks();
  FilteredKnowledge out{Mat(k.dk, k.num_fields)};
  for (int j = 0; j < k.num_fields; ++j)
    for (int r = 0; r < k.dk; ++r) out.values(r, j) = static_cast<double>(k.at(r, j)) * w.values(r / s, j);
  return out;
}

EsfnetResult esfnet_forward(const KnowledgeMatrix& k, std::span<const double> feat, Esfnet& net) {
  if (k.dk != net.dk() || k.num_fields != net.num_fields()) throw DataError("knowledge shape mismatch");
  const auto z = gate_input(k, feat);
  GateWeights w = gate_weights(z, net.gate(), net.chunks(), net.num_fields());
  FilteredKnowledge f = apply_weights(k, w);
  return {std::move(f), std::move(w)};
}

}  // namespace kser
