#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <numeric>
#include <set>

#include "doctest.h"

#include "brainseg/checkpoint.hpp"
#include "brainseg/error.hpp"
#include "brainseg/neuronet.hpp"
#include "brainseg/optimizer.hpp"
#include "brainseg/train.hpp"
#include "testkit.hpp"

using namespace brainseg;
using namespace brainseg::nn;

namespace {

Errc code_of(const std::function<void()> &f) {
  try {
    f();
  } catch (const Error &e) {
    return e.code();
  }
  FAIL("no error raised");
  return Errc::IoError;
}

template <typename T> Tensor<T> random_input(std::mt19937_64 &rng, std::size_t n) {
  std::normal_distribution<double> g(0.0, 1.0);
  Tensor<T> x({1, n, n, n, 1});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<T>(g(rng));
  return x;
}

LabelMap random_labels(std::mt19937_64 &rng, std::size_t n, int classes) {
  std::uniform_int_distribution<int> pick(0, classes - 1);
  LabelMap m{{1, n, n, n}, std::vector<std::int32_t>(n * n * n)};
  for (auto &l : m.data) l = pick(rng);
  return m;
}

// Moves every trainable tensor away from its textbook initial value.
template <typename T> void jitter(NetParams<T> &p, const NetConfig &cfg, std::mt19937_64 &rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (const auto &spec : param_specs(cfg)) {
    auto &t = p.at(spec.name);
    for (std::size_t i = 0; i < t.size(); ++i) {
      switch (spec.role) {
      case ParamRole::Bias: t[i] = static_cast<T>(0.1 * u(rng)); break;
      case ParamRole::Gamma: t[i] = static_cast<T>(1.0 + 0.5 * u(rng)); break;
      case ParamRole::Beta: t[i] = static_cast<T>(0.2 * u(rng)); break;
      default: break;
      }
    }
  }
}

// Sign pattern of every leaky-ReLU output in a Train-mode pass.
std::vector<bool> activation_signs(const ForwardCache<double> &cache) {
  std::vector<bool> s;
  for (const auto &op : cache.tape)
    if (op.kind == detail::OpKind::BnAct)
      for (double v : cache.nodes[op.out].data()) s.push_back(v > 0);
  return s;
}

struct GradCheck {
  std::size_t checked = 0, skipped = 0;
  double worst = 0.0;
  std::map<std::string, std::size_t> per_tensor;
};

NetConfig gradcheck_config() {
  NetConfig c;
  c.n_scales = 2;
  c.base_filters = 2;
  return c;
}

// Checks up to `per_tensor` kink-free entries of every trainable tensor. Each
// trial draws fresh parameters, input and labels; trials continue until every
// tensor has its quota or `max_trials` is reached.
GradCheck gradient_check(std::uint64_t seed, std::size_t per_tensor, int max_trials = 40) {
  const NetConfig cfg = gradcheck_config();
  const double h = 1e-5;
  GradCheck gc;
  std::mt19937_64 rng(seed);
  for (int trial = 0; trial < max_trials; ++trial) {
    NetParams<double> params = init_params(cfg, seed + trial).cast<double>();
    jitter(params, cfg, rng);
    const auto x = random_input<double>(rng, 8);
    const auto labels = random_labels(rng, 8, cfg.n_classes);
    auto fwd = forward(params, cfg, x, Mode::Train);
    const auto grads = backward(params, fwd.cache, labels);

    bool complete = true;
    for (const auto &spec : param_specs(cfg)) {
      if (!spec.trainable()) continue;
      REQUIRE_MESSAGE(grads.count(spec.name), spec.name);
      const auto &g = grads.at(spec.name);
      const std::size_t quota = std::min(per_tensor, g.size());
      auto &done = gc.per_tensor[spec.name];
      std::vector<std::size_t> idx(g.size());
      std::iota(idx.begin(), idx.end(), 0);
      std::shuffle(idx.begin(), idx.end(), rng);
      for (std::size_t i : idx) {
        if (done >= quota) break;
        NetParams<double> plus = params, minus = params;
        plus.at(spec.name)[i] += h;
        minus.at(spec.name)[i] -= h;
        auto fp = forward(plus, cfg, x, Mode::Train);
        auto fm = forward(minus, cfg, x, Mode::Train);
        // A kink of the leaky ReLU inside [θ-h, θ+h] breaks the difference quotient.
        if (activation_signs(fp.cache) != activation_signs(fm.cache)) {
          ++gc.skipped;
          continue;
        }
        const double numeric = (loss(fp.probs, labels).value - loss(fm.probs, labels).value) / (2 * h);
        const double analytic = g[i];
        const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
        gc.worst = std::max(gc.worst, rel);
        ++gc.checked;
        ++done;
        if (rel >= 1e-4) MESSAGE(spec.name, "[", i, "] analytic ", analytic, " numeric ", numeric);
      }
      complete &= done >= quota;
    }
    if (complete) break;
  }
  return gc;
}

} // namespace

TEST_SUITE("neuronet") {

TEST_CASE("default architecture constants") {
  const NetConfig cfg;
  CHECK(cfg.n_scales == 4);
  CHECK(cfg.units_per_scale == 2);
  CHECK(cfg.leakiness == 0.1);
  const int filters[] = {16, 32, 64, 128};
  for (int j = 0; j < 4; ++j) CHECK(cfg.filters(j) == filters[j]);
  CHECK(cfg.stride(0) == Stride{1, 1, 1});
  for (int j = 1; j < 4; ++j) CHECK(cfg.stride(j) == Stride{2, 2, 2});
  CHECK(cfg.total_stride() == Stride{8, 8, 8});

  const auto specs = param_specs(cfg);
  std::map<std::string, Shape> shape;
  for (const auto &s : specs) shape[s.name] = s.shape;
  CHECK(shape.at("init/conv/kernel") == Shape{3, 3, 3, 1, 16});
  CHECK(shape.at("scale1/unit1/conv1/kernel") == Shape{3, 3, 3, 16, 16});
  CHECK(shape.at("scale2/unit1/conv1/kernel") == Shape{3, 3, 3, 16, 32});
  CHECK(shape.at("scale2/unit1/proj/kernel") == Shape{1, 1, 1, 16, 32});
  CHECK(shape.at("scale4/unit2/conv2/kernel") == Shape{3, 3, 3, 128, 128});
  CHECK(shape.at("score4/kernel") == Shape{1, 1, 1, 128, 4});
  CHECK(shape.count("scale1/unit1/proj/kernel") == 0);
}

TEST_CASE("deepest feature grid is input / 8") {
  const NetConfig cfg;
  auto params = init_params(cfg, 1);
  std::mt19937_64 rng(1);
  const auto fwd = forward(params, cfg, random_input<float>(rng, 16), Mode::Train);
  std::size_t smallest = 16;
  for (const auto &n : fwd.cache.nodes)
    if (!n.empty() && n.rank() == 5) smallest = std::min(smallest, n.dim(1));
  CHECK(smallest == 2);
}

TEST_CASE("output shape and softmax normalization") {
  const NetConfig cfg;
  auto params = init_params(cfg, 3);
  std::mt19937_64 rng(3);
  const auto r = forward(params, cfg, random_input<float>(rng, 32), Mode::Infer);
  CHECK(r.logits.shape() == Shape{1, 32, 32, 32, 4});
  double worst = 0;
  for (std::size_t v = 0; v < r.probs.size() / 4; ++v) {
    double s = 0;
    for (int c = 0; c < 4; ++c) s += r.probs[v * 4 + c];
    worst = std::max(worst, std::abs(s - 1.0));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("zero network predicts the uniform distribution") {
  const NetConfig cfg;
  auto params = init_params(cfg, 0);
  for (const auto &s : param_specs(cfg))
    if (s.role == ParamRole::Kernel || s.role == ParamRole::Bias) params.at(s.name).fill(0.0f);
  std::mt19937_64 rng(4);
  const auto r = infer(params, cfg, random_input<float>(rng, 16));
  for (std::size_t i = 0; i < r.logits.size(); ++i) REQUIRE(r.logits[i] == 0.0f);
  for (std::size_t i = 0; i < r.probs.size(); ++i) REQUIRE(r.probs[i] == doctest::Approx(0.25));
}

TEST_CASE("input preconditions") {
  const NetConfig cfg;
  auto params = init_params(cfg, 0);
  CHECK(code_of([&] { infer(params, cfg, Tensor<float>({1, 12, 16, 16, 1})); }) == Errc::IndivisibleShape);
  CHECK(code_of([&] { infer(params, cfg, Tensor<float>({1, 16, 16, 16, 2})); }) == Errc::ChannelMismatch);
}

TEST_CASE("loss values") {
  Tensor<double> probs({1, 1, 1, 2, 4}, std::vector<double>{0.7, 0.1, 0.1, 0.1, 0.25, 0.25, 0.25, 0.25});
  const LabelMap labels{{1, 1, 1, 2}, {0, 0}};
  const double expect = (-std::log(0.7) - std::log(0.25)) / 2;
  CHECK(loss(probs, labels).value == doctest::Approx(expect).epsilon(1e-12));
  CHECK(loss(probs, labels).value == doctest::Approx(0.871485).epsilon(1e-6));

  Tensor<double> uniform({1, 2, 2, 2, 4}, 0.25);
  const LabelMap any{{1, 2, 2, 2}, {0, 1, 2, 3, 3, 2, 1, 0}};
  CHECK(loss(uniform, any).value == doctest::Approx(std::log(4.0)));

  Tensor<double> onehot({1, 2, 2, 2, 4}, 0.0);
  for (std::size_t v = 0; v < 8; ++v) onehot[v * 4 + any.data[v]] = 1.0;
  CHECK(loss(onehot, any).value == 0.0);
  const auto lv = loss(onehot, onehot, true);
  CHECK(lv.value == 0.0);
  CHECK(lv.per_voxel.size() == 8);

  const LabelMap wrong{{1, 2, 2, 1}, {0, 0, 0, 0}};
  CHECK(code_of([&] { loss(uniform, wrong); }) == Errc::ShapeMismatch);
}

TEST_CASE("logit gradient is (p - y) / N") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0, 1);
  Tensor<double> logits({1, 2, 2, 1, 4});
  for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = g(rng);
  const LabelMap labels{{1, 2, 2, 1}, {3, 0, 2, 1}};
  const auto probs = layers::softmax(logits);
  const auto analytic = loss_gradient_logits(probs, labels);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    auto up = logits, down = logits;
    up[i] += 1e-6;
    down[i] -= 1e-6;
    const double numeric =
        (loss(layers::softmax(up), labels).value - loss(layers::softmax(down), labels).value) / 2e-6;
    CHECK(analytic[i] == doctest::Approx(numeric).epsilon(1e-6));
  }
}

TEST_CASE("gradient check on the tiny configuration") {
  const auto gc = gradient_check(2024, 20);
  MESSAGE("checked ", gc.checked, " skipped ", gc.skipped, " worst relative error ", gc.worst);
  CHECK(gc.worst < 1e-4);
  for (const auto &spec : param_specs(gradcheck_config()))
    if (spec.trainable())
      CHECK_MESSAGE(gc.per_tensor.at(spec.name) >= std::min<std::size_t>(20, shape_size(spec.shape)), spec.name);
  // Every layer type is on the path: initial conv, strided conv, projection, BN, score, upsample-add.
  for (const char *name : {"init/conv/kernel", "scale2/down/kernel", "scale2/unit1/proj/kernel",
                           "scale1/unit1/bn1/gamma", "score1/kernel", "score2/kernel"})
    CHECK(gc.per_tensor.count(name) == 1);
}

TEST_CASE("every trainable parameter receives a gradient") {
  const NetConfig cfg;
  auto params = init_params(cfg, 9);
  std::mt19937_64 rng(9);
  auto fwd = forward(params, cfg, random_input<float>(rng, 8), Mode::Train);
  const auto grads = backward(params, fwd.cache, random_labels(rng, 8, 4));
  for (const auto &s : param_specs(cfg)) {
    CHECK(grads.count(s.name) == (s.trainable() ? 1u : 0u));
    if (s.trainable()) CHECK(grads.at(s.name).shape() == s.shape);
  }
}

TEST_CASE("stale caches are rejected") {
  const NetConfig cfg = testkit::tiny_config();
  auto params = init_params(cfg, 1);
  std::mt19937_64 rng(1);
  const auto x = random_input<float>(rng, 8);
  const auto labels = random_labels(rng, 8, 4);
  auto inf = forward(params, cfg, x, Mode::Infer);
  CHECK(code_of([&] { backward(params, inf.cache, labels); }) == Errc::StaleCache);
  auto tr = forward(params, cfg, x, Mode::Train);
  const auto grads = backward(params, tr.cache, labels);
  CHECK(code_of([&] { backward(params, tr.cache, labels); }) == Errc::StaleCache);
  auto tr2 = forward(params, cfg, x, Mode::Train);
  AdamState st;
  optimizer_step(params, grads, st);
  CHECK(code_of([&] { backward(params, tr2.cache, labels); }) == Errc::StaleCache);
}

TEST_CASE("init_params is deterministic and bounded") {
  const NetConfig cfg;
  const auto a = init_params(cfg, 42), b = init_params(cfg, 42), c = init_params(cfg, 43);
  CHECK(a.tensors == b.tensors);
  CHECK(a.tensors != c.tensors);
  for (const auto &s : param_specs(cfg)) {
    const auto &t = a.at(s.name);
    if (s.role == ParamRole::Kernel) {
      const double bound = std::sqrt(6.0 / double(s.fan_in + s.fan_out));
      for (float v : t.data()) REQUIRE(std::abs(v) <= bound);
    }
    if (s.role == ParamRole::Gamma || s.role == ParamRole::RunningVar)
      for (float v : t.data()) REQUIRE(v == 1.0f);
    if (s.role == ParamRole::Bias || s.role == ParamRole::Beta || s.role == ParamRole::RunningMean)
      for (float v : t.data()) REQUIRE(v == 0.0f);
  }
}

TEST_CASE("Adam algebra") {
  NetParams<float> p;
  p.tensors.emplace("w", Tensor<float>({1}, 0.0f));
  Gradients<float> g;
  g.emplace("w", Tensor<float>({1}, 1.0f));
  AdamState st;
  optimizer_step(p, g, st);
  CHECK(p.at("w")[0] == doctest::Approx(-0.001).epsilon(1e-6));
  CHECK(p.version == 1);

  NetParams<float> q;
  q.tensors.emplace("w", Tensor<float>({3}, 0.5f));
  Gradients<float> zero;
  zero.emplace("w", Tensor<float>({3}, 0.0f));
  AdamState zs;
  optimizer_step(q, zero, zs);
  for (float v : q.at("w").data()) CHECK(v == 0.5f);
  for (float v : zs.m.at("w").data()) CHECK(v == 0.0f);
  for (float v : zs.v.at("w").data()) CHECK(v == 0.0f);

  Gradients<float> bad;
  bad.emplace("w", Tensor<float>({2}, 1.0f));
  CHECK(code_of([&] { optimizer_step(q, bad, zs); }) == Errc::ShapeMismatch);

  // Two identical runs agree bit for bit.
  auto run = [] {
    const NetConfig cfg = testkit::tiny_config();
    auto params = init_params(cfg, 5);
    std::mt19937_64 rng(5);
    const auto x = random_input<float>(rng, 8);
    const auto labels = random_labels(rng, 8, 4);
    AdamState s;
    for (int i = 0; i < 3; ++i) {
      auto f = forward(params, cfg, x, Mode::Train);
      optimizer_step(params, backward(params, f.cache, labels), s);
    }
    return params.tensors;
  };
  CHECK(run() == run());
}

TEST_CASE("checkpoint round trip and failure modes") {
  const auto dir = testkit::scratch_dir("neuronet_ckpt");
  const NetConfig cfg = testkit::tiny_config();
  auto params = init_params(cfg, 7);
  std::mt19937_64 rng(7);
  auto f = forward(params, cfg, random_input<float>(rng, 8), Mode::Train);
  AdamState st;
  optimizer_step(params, backward(params, f.cache, random_labels(rng, 8, 4)), st);
  save_checkpoint(params, &st, dir / "a.nnl");
  const auto back = load_checkpoint(dir / "a.nnl");
  CHECK(back.params.tensors == params.tensors);
  REQUIRE(back.state.has_value());
  CHECK(back.state->step == st.step);
  CHECK(back.state->m == st.m);
  CHECK(back.state->v == st.v);

  std::ifstream in(dir / "a.nnl", std::ios::binary);
  std::vector<char> bytes{std::istreambuf_iterator<char>(in), {}};
  CHECK(std::string(bytes.data(), 4) == "NNL1");
  {
    std::ofstream out(dir / "short.nnl", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK(code_of([&] { load_checkpoint(dir / "short.nnl"); }) == Errc::CorruptRecord);
  bytes[0] = 'X';
  {
    std::ofstream out(dir / "magic.nnl", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK(code_of([&] { load_checkpoint(dir / "magic.nnl"); }) == Errc::BadMagic);

  const auto warm = init_params(cfg, 0, InitSpec::from_checkpoint(dir / "a.nnl"));
  CHECK(warm.tensors == params.tensors);

  NetConfig wider = cfg;
  wider.base_filters = 8;
  CHECK(code_of([&] { init_params(wider, 0, InitSpec::from_checkpoint(dir / "a.nnl")); }) == Errc::ShapeMismatch);

  auto partial = params;
  partial.tensors.erase("score1/kernel");
  save_checkpoint(partial, nullptr, dir / "partial.nnl");
  try {
    init_params(cfg, 0, InitSpec::from_checkpoint(dir / "partial.nnl"));
    FAIL("expected BadCheckpoint");
  } catch (const Error &e) {
    CHECK(e.code() == Errc::BadCheckpoint);
    CHECK(std::string(e.what()).find("score1/kernel") != std::string::npos);
  }
}

TEST_CASE("prediction padding and cropping") {
  const NetConfig cfg;
  const auto pad = prediction_padding({30, 30, 30}, cfg);
  for (int a = 0; a < 3; ++a) {
    CHECK(pad[a][0] + pad[a][1] + 30 == 32);
    CHECK(pad[a][0] == 1);
  }
  const auto none = prediction_padding({32, 32, 32}, cfg);
  for (int a = 0; a < 3; ++a) CHECK(none[a][0] + none[a][1] == 0);

  const NetConfig tiny = testkit::tiny_config();
  const auto params = init_params(tiny, 2);
  const auto ph = testkit::make_phantom({30, 29, 31});
  const auto pred = predict_volume(params, tiny, ph.image, true);
  CHECK(pred.labels.dims() == Index3{30, 29, 31});
  CHECK(pred.labels.is_label());
  REQUIRE(pred.probabilities.size() == 4);
  for (double l : pred.labels.data()) REQUIRE((l >= 0 && l <= 3));
  // Ties and argmax: the label is the first maximal class.
  for (std::size_t i = 0; i < pred.labels.size(); i += 97) {
    int best = 0;
    for (int c = 1; c < 4; ++c)
      if (pred.probabilities[c][i] > pred.probabilities[best][i]) best = c;
    CHECK(pred.labels[i] == best);
  }
}

TEST_CASE("fully convolutional core is translation covariant") {
  NetConfig cfg;
  cfg.n_scales = 3;
  cfg.units_per_scale = 1;
  cfg.base_filters = 2;
  auto params = init_params(cfg, 12);
  std::mt19937_64 rng(12);
  jitter(params, cfg, rng);
  for (const auto &s : param_specs(cfg)) // non-trivial running statistics
    if (s.role == ParamRole::RunningVar)
      for (auto &v : params.at(s.name).data()) v = 0.5f + static_cast<float>(rng() % 100) / 100.0f;
  const std::size_t n = 80, shift = 4, margin = 30;
  const auto x = random_input<float>(rng, n);
  Tensor<float> y({1, n, n, n, 1});
  for (std::size_t i = 0; i + shift < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < n; ++k) y[(i * n + j) * n + k] = x[((i + shift) * n + j) * n + k];
  const auto a = infer(params, cfg, x).logits;
  const auto b = infer(params, cfg, y).logits;
  double worst = 0;
  for (std::size_t i = margin; i + margin < n - shift; ++i)
    for (std::size_t j = margin; j + margin < n; ++j)
      for (std::size_t k = margin; k + margin < n; ++k)
        for (std::size_t c = 0; c < 4; ++c)
          worst = std::max(worst, double(std::abs(b[((i * n + j) * n + k) * 4 + c] -
                                                  a[(((i + shift) * n + j) * n + k) * 4 + c])));
  CHECK(worst < 1e-5);
}

TEST_CASE("training contract") {
  const NetConfig cfg = testkit::tiny_config();
  const auto ph = testkit::make_phantom({16, 16, 16});
  struct Fixed : BatchSource {
    Batch b;
    Batch next() override { return b; }
  } data;
  data.b = {to_tensor(ph.image), to_label_map(ph.labels)};
  const auto dir = testkit::scratch_dir("neuronet_train");

  auto params = init_params(cfg, 3);
  const auto initial = params.tensors;
  AdamState st;
  TrainOptions opts;
  opts.checkpoint_path = dir / "zero.nnl";
  CHECK(train(params, st, cfg, data, 0, opts).empty());
  CHECK(params.tensors == initial);
  CHECK(load_checkpoint(dir / "zero.nnl").params.tensors == initial);

  opts.checkpoint_path = dir / "five.nnl";
  opts.checkpoint_every = 2;
  const auto losses = train(params, st, cfg, data, 5, opts);
  CHECK(losses.size() == 5);
  CHECK(st.step == 5);
  CHECK(load_checkpoint(dir / "five.nnl").params.tensors == params.tensors);
  write_loss_trace(losses, dir / "loss.csv");
  std::ifstream csv(dir / "loss.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "step,loss");
  int rows = 0;
  for (std::string line; std::getline(csv, line);) ++rows;
  CHECK(rows == 5);
}

TEST_CASE("overfit a single phantom" * doctest::timeout(600)) {
  const auto run = testkit::run_overfit(300, 1, AdamHyper{});
  MESSAGE("dice bg ", run.dice[0], " csf ", run.dice[1], " gm ", run.dice[2], " wm ", run.dice[3]);
  for (int c = 1; c < 4; ++c) CHECK(run.dice[c] >= 0.95);
  const std::size_t tenth = run.losses.size() / 10;
  double first = 0, last = 0;
  for (std::size_t i = 0; i < tenth; ++i) {
    first += run.losses[i];
    last += run.losses[run.losses.size() - 1 - i];
  }
  CHECK(last < first);
}

TEST_CASE("trained toy network matches its stored golden output") {
  const auto golden = testkit::data_dir() / "toy_logits.bin";
  const NetConfig cfg = testkit::tiny_config();
  auto params = init_params(cfg, 77);
  const auto ph = testkit::make_phantom({16, 16, 16}, {1, 1, 1}, 0.02, 77);
  struct Fixed : BatchSource {
    Batch b;
    Batch next() override { return b; }
  } data;
  data.b = {to_tensor(ph.image), to_label_map(ph.labels)};
  AdamState st;
  train(params, st, cfg, data, 10);
  const auto logits = infer(params, cfg, to_tensor(ph.image)).logits;

  if (std::getenv("BRAINSEG_WRITE_GOLDEN")) {
    std::ofstream out(golden, std::ios::binary);
    out.write(reinterpret_cast<const char *>(logits.ptr()), static_cast<std::streamsize>(logits.size() * 4));
  }
  std::ifstream in(golden, std::ios::binary);
  REQUIRE_MESSAGE(in.good(), "golden file missing: ", golden.string());
  std::vector<float> stored(logits.size());
  in.read(reinterpret_cast<char *>(stored.data()), static_cast<std::streamsize>(stored.size() * 4));
  REQUIRE(in.gcount() == static_cast<std::streamsize>(stored.size() * 4));
  double worst = 0;
  for (std::size_t i = 0; i < stored.size(); ++i) worst = std::max(worst, double(std::abs(stored[i] - logits[i])));
  CHECK(worst < 1e-6);
}

} // TEST_SUITE
