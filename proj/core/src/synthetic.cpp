#include "kser/synthetic.hpp"

#include "kser/error.hpp"
#include "kser/metrics.hpp"
#include "kser/rng.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

namespace kser {
namespace {

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

// Unit vector of length n.
std::vector<double> direction(Rng& rng, int n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  double norm = 0.0;
  while (norm < 1e-6) {
    norm = 0.0;
    for (auto& x : v) {
      x = rng.normal();
      norm += x * x;
    }
    norm = std::sqrt(norm);
  }
  for (auto& x : v) x /= norm;
  return v;
}

}  // namespace

void SyntheticSpec::validate() const {
  const auto fail = [](const std::string& m) { throw ValidationError("synthetic spec: " + m); };
  if (n_samples < 3) fail("n_samples must be at least 3");
  if (n_users < 1 || n_items < 1) fail("n_users and n_items must be positive");
  if (n_channels < 1) fail("n_channels must be positive");
  if (muted_channels < 0 || muted_channels >= n_channels) fail("muted_channels must lie in [0, n_channels)");
  if (num_fields < 1) fail("num_fields must be positive");
  if (dk < 1 || chunks < 1 || dk % chunks != 0) fail("dk must be a positive multiple of chunks");
  if (sign_coded && chunks < 2) fail("sign_coded needs at least two chunks");
  if (signal_field < 0 || signal_field >= num_fields) fail("signal_field must index a knowledge field");
  if (std::isnan(snr) || snr < 0) fail("snr must be non-negative");
  if (!(user_signal >= 0) || !(knowledge_noise >= 0) || !(noise_scale >= 0)) fail("noise levels must be non-negative");
  if (!std::isfinite(intercept)) fail("intercept must be finite");
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("synthetic spec must be an object");
  SyntheticSpec s;
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "n_samples") s.n_samples = v.get<std::size_t>();
      else if (key == "n_users") s.n_users = v.get<int>();
      else if (key == "n_items") s.n_items = v.get<int>();
      else if (key == "n_channels") s.n_channels = v.get<int>();
      else if (key == "muted_channels") s.muted_channels = v.get<int>();
      else if (key == "num_fields") s.num_fields = v.get<int>();
      else if (key == "dk") s.dk = v.get<int>();
      else if (key == "chunks") s.chunks = v.get<int>();
      else if (key == "signal_field") s.signal_field = v.get<int>();
      else if (key == "snr") {
        if (v.is_string() && (v == "inf" || v == "infinity")) s.snr = std::numeric_limits<double>::infinity();
        else s.snr = v.get<double>();
      } else if (key == "user_signal") s.user_signal = v.get<double>();
      else if (key == "intercept") s.intercept = v.get<double>();
      else if (key == "knowledge_noise") s.knowledge_noise = v.get<double>();
      else if (key == "noise_scale") s.noise_scale = v.get<double>();
      else if (key == "sign_coded") s.sign_coded = v.get<bool>();
      else if (key == "min_margin") s.min_margin = v.get<double>();
      else throw ValidationError("synthetic spec: unknown key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("synthetic spec: bad value for '" + key + "': " + e.what());
    }
  }
  s.validate();
  return s;
}

nlohmann::json SyntheticSpec::to_json() const {
  nlohmann::json j;
  j["n_samples"] = n_samples;
  j["n_users"] = n_users;
  j["n_items"] = n_items;
  j["n_channels"] = n_channels;
  j["muted_channels"] = muted_channels;
  j["num_fields"] = num_fields;
  j["dk"] = dk;
  j["chunks"] = chunks;
  j["signal_field"] = signal_field;
  if (std::isinf(snr)) j["snr"] = "inf";
  else j["snr"] = snr;
  j["user_signal"] = user_signal;
  j["intercept"] = intercept;
  j["knowledge_noise"] = knowledge_noise;
  j["noise_scale"] = noise_scale;
  j["sign_coded"] = sign_coded;
  j["min_margin"] = min_margin;
  return j;
}

SyntheticDataset gen_synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng root(seed);
  Rng latent_rng = root.fork(1), pack_rng = root.fork(2), sample_rng = root.fork(3);

  std::vector<double> quality(static_cast<std::size_t>(spec.n_items));
  std::vector<double> sign(static_cast<std::size_t>(spec.n_items));
  for (int i = 0; i < spec.n_items; ++i) {
    quality[i] = latent_rng.normal();
    sign[i] = latent_rng.uniform() < 0.5 ? -1.0 : 1.0;
  }
  std::vector<double> bias(static_cast<std::size_t>(spec.n_users));
  for (auto& b : bias) b = spec.user_signal * latent_rng.normal();

  // Knowledge pack.
  const int s = spec.dk / spec.chunks;
  const auto u0 = direction(pack_rng, s);
  const auto u1 = direction(pack_rng, s);
  std::vector<KnowledgeField> fields;
  for (int j = 0; j < spec.num_fields; ++j) {
    const bool by_item = j == spec.signal_field || j % 2 == 0;
    const int count = by_item ? spec.n_items : spec.n_users;
    std::vector<std::string> keys;
    std::vector<float> values;
    keys.reserve(static_cast<std::size_t>(count));
    values.reserve(static_cast<std::size_t>(count) * spec.dk);
    for (int r = 0; r < count; ++r) {
      keys.push_back((by_item ? "i" : "u") + std::to_string(r));
      for (int d = 0; d < spec.dk; ++d) {
        double x;
        if (j != spec.signal_field) {
          x = spec.noise_scale * pack_rng.normal();
        } else if (d < s) {
          const double q = spec.sign_coded ? sign[r] * quality[r] : quality[r];
          x = q * u0[d] + spec.knowledge_noise * pack_rng.normal();
        } else if (spec.sign_coded && d < 2 * s) {
          x = sign[r] * u1[d - s] + spec.knowledge_noise * pack_rng.normal();
        } else {
          x = spec.noise_scale * pack_rng.normal();
        }
        values.push_back(static_cast<float>(x));
      }
    }
    const std::string name = (j == spec.signal_field ? "signal" : "noise") + std::to_string(j);
    fields.emplace_back(name, by_item ? KeyedBy::ItemId : KeyedBy::UserId, spec.dk, std::move(keys),
                        std::move(values));
  }

  // Interaction log.
  SyntheticDataset out;
  out.pack = KnowledgePack(std::move(fields));
  SampleSet& set = out.samples;
  set.context_fields = {"channel"};
  set.samples.reserve(spec.n_samples);
  std::vector<double> bayes, categorical, labels;
  bayes.reserve(spec.n_samples);
  categorical.reserve(spec.n_samples);
  labels.reserve(spec.n_samples);
  const bool exact = std::isinf(spec.snr);
  std::int64_t t = 1'000'000'000;
  for (std::size_t n = 0; n < spec.n_samples; ++n) {
    const auto u = static_cast<std::size_t>(sample_rng.below(static_cast<std::uint64_t>(spec.n_users)));
    const auto i = static_cast<std::size_t>(sample_rng.below(static_cast<std::uint64_t>(spec.n_items)));
    const int channel = static_cast<int>(sample_rng.below(static_cast<std::uint64_t>(spec.n_channels)));
    const double r = channel < spec.muted_channels ? 0.0 : 1.0;
    t += 1 + static_cast<std::int64_t>(sample_rng.below(60));

    const double base = spec.intercept + bias[u];
    double p;
    int label;
    if (exact && r > 0) {
      p = quality[i] > 0 ? 1.0 : 0.0;
      label = quality[i] > 0 ? 1 : 0;
      bayes.push_back(p);
      categorical.push_back(0.5);
    } else {
      const double snr = exact ? 0.0 : spec.snr;
      p = sigmoid(base + snr * quality[i] * r);
      label = sample_rng.uniform() < p ? 1 : 0;
      bayes.push_back(p);
      const double spread = snr * r;
      categorical.push_back(sigmoid(base / std::sqrt(1.0 + std::numbers::pi * spread * spread / 8.0)));
    }
    labels.push_back(label);

    Sample smp;
    smp.sample_id = "s" + std::to_string(n);
    smp.user_id = "u" + std::to_string(u);
    smp.item_id = "i" + std::to_string(i);
    smp.context = {"ch" + std::to_string(channel)};
    smp.label = label;
    smp.timestamp = t;
    set.samples.push_back(std::move(smp));
  }

  double positives = 0.0;
  for (double y : labels) positives += y;
  out.oracle.positive_rate = positives / static_cast<double>(labels.size());
  if (positives > 0 && positives < static_cast<double>(labels.size())) {
    out.oracle.bayes_auc = compute_auc(bayes, labels);
    out.oracle.categorical_auc = compute_auc(categorical, labels);
  }
  if (out.oracle.bayes_auc - out.oracle.categorical_auc < spec.min_margin)
    throw ValidationError("synthetic spec: knowledge margin " +
                          std::to_string(out.oracle.bayes_auc - out.oracle.categorical_auc) + " is below min_margin " +
                          std::to_string(spec.min_margin));
  return out;
}

void write_synthetic(const SyntheticDataset& d, const SyntheticSpec& spec, std::uint64_t seed,
                     const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());

  const auto tsv = dir / "interactions.tsv";
  std::ofstream out(tsv, std::ios::binary | std::ios::trunc);
  out << "user_id\titem_id\trating\ttimestamp";
  for (const auto& c : d.samples.context_fields) out << '\t' << c;
  out << '\n';
  for (const auto& s : d.samples.samples) {
    out << s.user_id << '\t' << s.item_id << '\t' << (s.label == 1 ? 5 : 1) << '\t' << s.timestamp;
    for (const auto& c : s.context) out << '\t' << c;
    out << '\n';
  }
  if (!out) throw DataError("cannot write " + tsv.string());

  write_pack(d.pack, dir / "knowledge");

  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["spec"] = spec.to_json();
  j["n_samples"] = d.samples.size();
  j["positive_rate"] = d.oracle.positive_rate;
  j["bayes_auc"] = d.oracle.bayes_auc;
  j["categorical_auc"] = d.oracle.categorical_auc;
  std::ofstream oj(dir / "oracle.json", std::ios::binary | std::ios::trunc);
  oj << j.dump(2) << '\n';
  if (!oj) throw DataError("cannot write " + (dir / "oracle.json").string());
}

}  // namespace kser
