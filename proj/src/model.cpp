#include "kinadapt/model.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace kinadapt {

namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::size_t parse_count(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw DataError("model config: missing key '" + key + "'");
  std::size_t out = 0;
  const auto& s = it->second;
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw DataError("model config: bad integer for '" + key + "': " + s);
  }
  return out;
}

double parse_rate(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw DataError("model config: missing key '" + key + "'");
  double out = 0;
  const auto& s = it->second;
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw DataError("model config: bad number for '" + key + "': " + s);
  }
  return out;
}

void check_rate(const char* name, double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError(std::string("model config: ") + name + " must be in [0, 1)");
  }
}

}  // namespace

void ModelConfig::validate() const {
  auto positive = [](const char* name, std::size_t v) {
    if (v < 1) throw ConfigError(std::string("model config: ") + name + " must be >= 1");
  };
  positive("in_channels", in_channels);
  positive("conv_filters[0]", conv_filters[0]);
  positive("conv_filters[1]", conv_filters[1]);
  positive("kernel_widths[0]", kernel_widths[0]);
  positive("kernel_widths[1]", kernel_widths[1]);
  positive("lstm_hidden", lstm_hidden);
  positive("dense_units", dense_units);
  if (num_classes < 2) throw ConfigError("model config: num_classes must be >= 2");
  check_rate("conv_dropout", conv_dropout);
  check_rate("lstm_dropout", lstm_dropout);
}

std::size_t ModelConfig::min_sequence_length() const {
  return std::max(kernel_widths[0], kernel_widths[1]);
}

std::map<std::string, std::string> ModelConfig::to_key_values() const {
  return {
      {"in_channels", std::to_string(in_channels)},
      {"conv_filters.0", std::to_string(conv_filters[0])},
      {"conv_filters.1", std::to_string(conv_filters[1])},
      {"kernel_widths.0", std::to_string(kernel_widths[0])},
      {"kernel_widths.1", std::to_string(kernel_widths[1])},
      {"conv_dropout", format_double(conv_dropout)},
      {"lstm_hidden", std::to_string(lstm_hidden)},
      {"lstm_dropout", format_double(lstm_dropout)},
      {"dense_units", std::to_string(dense_units)},
      {"num_classes", std::to_string(num_classes)},
  };
}

ModelConfig ModelConfig::from_key_values(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  c.in_channels = parse_count(kv, "in_channels");
  c.conv_filters = {parse_count(kv, "conv_filters.0"), parse_count(kv, "conv_filters.1")};
  c.kernel_widths = {parse_count(kv, "kernel_widths.0"), parse_count(kv, "kernel_widths.1")};
  c.conv_dropout = parse_rate(kv, "conv_dropout");
  c.lstm_hidden = parse_count(kv, "lstm_hidden");
  c.lstm_dropout = parse_rate(kv, "lstm_dropout");
  c.dense_units = parse_count(kv, "dense_units");
  c.num_classes = parse_count(kv, "num_classes");
  return c;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  weights.visit([&](const std::string&, const NdArray& t, bool) { n += t.size(); });
  return n;
}

void ModelParams::validate_shapes() const {
  const auto& c = config;
  const std::size_t h = c.lstm_hidden;
  const std::map<std::string, Shape> expected = {
      {"conv1.kernel", {c.conv_filters[0], c.in_channels, c.kernel_widths[0]}},
      {"conv1.bias", {c.conv_filters[0]}},
      {"conv2.kernel", {c.conv_filters[1], c.conv_filters[0], c.kernel_widths[1]}},
      {"conv2.bias", {c.conv_filters[1]}},
      {"lstm1_fwd.w_ih", {4 * h, c.in_channels}},
      {"lstm1_bwd.w_ih", {4 * h, c.in_channels}},
      {"lstm2_fwd.w_ih", {4 * h, 2 * h}},
      {"lstm2_bwd.w_ih", {4 * h, 2 * h}},
      {"dense.weight", {c.dense_units, c.conv_filters[1] + 2 * h}},
      {"dense.bias", {c.dense_units}},
      {"classifier.weight", {c.num_classes, c.dense_units}},
      {"classifier.bias", {c.num_classes}},
  };
  weights.visit([&](const std::string& name, const NdArray& t, bool) {
    Shape want;
    if (auto it = expected.find(name); it != expected.end()) {
      want = it->second;
    } else if (name.ends_with(".w_hh")) {
      want = {4 * h, h};
    } else {
      want = {4 * h};  // lstm biases
    }
    if (t.shape() != want) {
      throw ShapeError("model params: " + name + " has shape " + to_string(t.shape()) +
                       ", expected " + to_string(want));
    }
  });
}

std::vector<NdArray> ModelParams::tensors() const {
  std::vector<NdArray> out;
  weights.visit([&](const std::string&, const NdArray& t, bool) { out.push_back(t); });
  return out;
}

ModelParams model_init(const ModelConfig& config, Rng& rng) {
  config.validate();
  const auto& c = config;
  ModelParams p;
  p.config = c;
  p.weights.conv1 = init_conv1d(c.in_channels, c.conv_filters[0], c.kernel_widths[0], rng);
  p.weights.conv2 = init_conv1d(c.conv_filters[0], c.conv_filters[1], c.kernel_widths[1], rng);
  p.weights.lstm1_fwd = init_lstm(c.in_channels, c.lstm_hidden, rng);
  p.weights.lstm1_bwd = init_lstm(c.in_channels, c.lstm_hidden, rng);
  p.weights.lstm2_fwd = init_lstm(2 * c.lstm_hidden, c.lstm_hidden, rng);
  p.weights.lstm2_bwd = init_lstm(2 * c.lstm_hidden, c.lstm_hidden, rng);
  p.weights.dense = init_dense(c.conv_filters[1] + 2 * c.lstm_hidden, c.dense_units, rng);
  p.weights.classifier = init_dense(c.dense_units, c.num_classes, rng);
  return p;
}

SkillNetwork<Var> bind_parameters(const ModelParams& params, bool trainable) {
  auto leaf = [trainable](const NdArray& a) { return trainable ? parameter(a) : constant(a); };
  const auto& w = params.weights;
  auto lstm = [&](const LstmWeights<NdArray>& l) {
    return LstmWeights<Var>{leaf(l.w_ih), leaf(l.w_hh), leaf(l.bias)};
  };
  SkillNetwork<Var> net;
  net.conv1 = {leaf(w.conv1.kernel), leaf(w.conv1.bias)};
  net.conv2 = {leaf(w.conv2.kernel), leaf(w.conv2.bias)};
  net.lstm1_fwd = lstm(w.lstm1_fwd);
  net.lstm1_bwd = lstm(w.lstm1_bwd);
  net.lstm2_fwd = lstm(w.lstm2_fwd);
  net.lstm2_bwd = lstm(w.lstm2_bwd);
  net.dense = {leaf(w.dense.weight), leaf(w.dense.bias)};
  net.classifier = {leaf(w.classifier.weight), leaf(w.classifier.bias)};
  return net;
}

ForwardResult model_forward(const SkillNetwork<Var>& net, const ModelConfig& config,
                            const NdArray& trial, Mode mode, const DropoutRates& rates, Rng& rng) {
  if (trial.rank() != 2 || trial.dim(0) != config.in_channels) {
    throw ShapeError("model_forward: trial shape " + to_string(trial.shape()) + " but model expects " +
                     std::to_string(config.in_channels) + " channels");
  }
  if (trial.dim(1) < config.min_sequence_length()) {
    throw ShapeError("model_forward: sequence length " + std::to_string(trial.dim(1)) +
                     " shorter than kernel width " + std::to_string(config.min_sequence_length()));
  }
  const DropoutMode dmode = mode == Mode::train  ? DropoutMode::train
                            : mode == Mode::mc   ? DropoutMode::mc
                                                 : DropoutMode::eval;
  const DropoutSpec conv_drop{rates.conv, dmode};
  const DropoutSpec rec_drop{rates.recurrent, dmode};

  const Var x = constant(trial);

  Var conv = dropout(relu(conv1d(x, net.conv1, Padding::same)), conv_drop, rng);
  conv = dropout(relu(conv1d(conv, net.conv2, Padding::same)), conv_drop, rng);
  const Var pooled = global_avg_pool(conv);

  const Var seq = bilstm_sequence(x, net.lstm1_fwd, net.lstm1_bwd);
  const Var recurrent = dropout(bilstm(seq, net.lstm2_fwd, net.lstm2_bwd), rec_drop, rng);

  const Var features = concat({pooled, recurrent}, 0);
  const Var hidden = relu(dense(features, net.dense));
  const Var logits = dense(hidden, net.classifier);
  return {logits, softmax(logits)};
}

NdArray model_predict(const ModelParams& params, const NdArray& trial, Mode mode, Rng& rng) {
  NoGradGuard guard;
  const auto net = bind_parameters(params, false);
  const DropoutRates rates{params.config.conv_dropout, params.config.lstm_dropout};
  return model_forward(net, params.config, trial, mode, rates, rng).probs.value();
}

// ---------------------------------------------------------------------------
// Checkpoint: little-endian
//   "KADP" | u32 version | u32 n_keys | n_keys x (u32 len, key, u32 len, value)
//   | u32 n_tensors | n_tensors x (u32 rank, rank x u64 dims, f64 values)
// Tensors follow SkillNetwork::visit order.

namespace {

constexpr char kMagic[4] = {'K', 'A', 'D', 'P'};

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::uint8_t bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.insert(out.end(), bytes, bytes + sizeof(T));
}

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    need(sizeof(T));
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
  }

  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError("checkpoint: corrupt file (truncated)");
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const ModelParams& params) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  const auto kv = params.config.to_key_values();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(kv.size()));
  for (const auto& [k, v] : kv) {
    put_string(out, k);
    put_string(out, v);
  }
  const auto tensors = params.tensors();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(out, d);
    for (double v : t.values()) put<double>(out, v);
  }
  return out;
}

ModelParams deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw DataError("checkpoint: corrupt file (bad magic)");
  }
  std::vector<std::uint8_t> body(bytes.begin() + 4, bytes.end());
  Reader in(body);
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint: unsupported format version " + std::to_string(version) +
                    " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  std::map<std::string, std::string> kv;
  const auto n_keys = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_keys; ++i) {
    auto k = in.get_string();
    kv[k] = in.get_string();
  }
  ModelParams params;
  params.config = ModelConfig::from_key_values(kv);
  try {
    params.config.validate();
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
  const auto n_tensors = in.get<std::uint32_t>();
  std::vector<NdArray> tensors;
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    const auto rank = in.get<std::uint32_t>();
    if (rank > 8) throw DataError("checkpoint: corrupt file (rank " + std::to_string(rank) + ")");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(in.get<std::uint64_t>());
    const std::size_t n = element_count(shape);
    if (n > body.size()) throw DataError("checkpoint: corrupt file (tensor too large)");
    std::vector<double> values(n);
    for (auto& v : values) v = in.get<double>();
    tensors.emplace_back(std::move(shape), std::move(values));
  }
  if (!in.done()) throw DataError("checkpoint: corrupt file (trailing bytes)");
  std::size_t expected = 0;
  params.weights.visit([&](const std::string&, NdArray&, bool) { ++expected; });
  if (tensors.size() != expected) {
    throw DataError("checkpoint: shape inconsistency (" + std::to_string(tensors.size()) +
                    " tensors, expected " + std::to_string(expected) + ")");
  }
  std::size_t i = 0;
  params.weights.visit([&](const std::string&, NdArray& t, bool) { t = tensors[i++]; });
  try {
    params.validate_shapes();
  } catch (const ShapeError& e) {
    throw DataError(std::string("checkpoint: shape inconsistency: ") + e.what());
  }
  return params;
}

void model_save(const ModelParams& params, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("checkpoint: cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("checkpoint: write failed for '" + path.string() + "'");
}

ModelParams model_load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace kinadapt
