#include "brainseg/net_config.hpp"

#include "brainseg/error.hpp"

namespace brainseg::nn {

std::string shape_string(const Shape &s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + ")";
}

Stride NetConfig::stride(int scale) const {
  if (!strides.empty()) return strides.at(static_cast<std::size_t>(scale));
  return scale == 0 ? Stride{1, 1, 1} : Stride{2, 2, 2};
}

Stride NetConfig::total_stride() const {
  Stride t{1, 1, 1};
  for (int j = 0; j < n_scales; ++j)
    for (int a = 0; a < 3; ++a) t[a] *= stride(j)[a];
  return t;
}

void NetConfig::validate() const {
  if (n_scales < 2) raise(Errc::InvalidArgument, "n_scales must be >= 2");
  if (units_per_scale < 1) raise(Errc::InvalidArgument, "units_per_scale must be >= 1");
  if (base_filters < 1) raise(Errc::InvalidArgument, "base_filters must be >= 1");
  if (n_classes < 2) raise(Errc::InvalidArgument, "n_classes must be >= 2");
  if (!(leakiness >= 0.0 && leakiness < 1.0)) raise(Errc::InvalidArgument, "leakiness must lie in [0, 1)");
  if (kernel_size < 1 || kernel_size % 2 == 0) raise(Errc::InvalidArgument, "kernel_size must be odd");
  if (!strides.empty() && static_cast<int>(strides.size()) != n_scales)
    raise(Errc::InvalidArgument, "one stride per scale is required");
  for (int j = 0; j < n_scales; ++j)
    for (int s : stride(j))
      if (s != 1 && s != 2) raise(Errc::InvalidArgument, "strides must be 1 or 2");
  if (!(bn_epsilon > 0.0) || !(bn_momentum >= 0.0 && bn_momentum < 1.0))
    raise(Errc::InvalidArgument, "invalid batch-norm settings");
}

namespace names {
std::string init_conv() { return "init/conv"; }
std::string down_conv(int scale) { return "scale" + std::to_string(scale + 1) + "/down"; }
std::string unit_prefix(int scale, int unit) {
  return "scale" + std::to_string(scale + 1) + "/unit" + std::to_string(unit + 1);
}
std::string score_conv(int scale) { return "score" + std::to_string(scale + 1); }
} // namespace names

namespace {

void add_conv(std::vector<ParamSpec> &out, const std::string &prefix, std::size_t k, std::size_t cin,
              std::size_t cout) {
  const std::size_t taps = k * k * k;
  out.push_back({prefix + "/kernel", {k, k, k, cin, cout}, ParamRole::Kernel, taps * cin, taps * cout});
  out.push_back({prefix + "/bias", {cout}, ParamRole::Bias});
}

void add_bn(std::vector<ParamSpec> &out, const std::string &prefix, std::size_t c) {
  out.push_back({prefix + "/gamma", {c}, ParamRole::Gamma});
  out.push_back({prefix + "/beta", {c}, ParamRole::Beta});
  out.push_back({prefix + "/running_mean", {c}, ParamRole::RunningMean});
  out.push_back({prefix + "/running_var", {c}, ParamRole::RunningVar});
}

} // namespace

std::vector<ParamSpec> param_specs(const NetConfig &cfg) {
  cfg.validate();
  const auto k = static_cast<std::size_t>(cfg.kernel_size);
  std::vector<ParamSpec> out;
  auto ch = static_cast<std::size_t>(cfg.base_filters);
  add_conv(out, names::init_conv(), k, 1, ch);
  for (int j = 0; j < cfg.n_scales; ++j) {
    add_conv(out, names::down_conv(j), k, ch, ch);
    const auto f = static_cast<std::size_t>(cfg.filters(j));
    for (int u = 0; u < cfg.units_per_scale; ++u) {
      const std::string p = names::unit_prefix(j, u);
      const std::size_t cin = u == 0 ? ch : f;
      add_bn(out, p + "/bn1", cin);
      add_conv(out, p + "/conv1", k, cin, f);
      add_bn(out, p + "/bn2", f);
      add_conv(out, p + "/conv2", k, f, f);
      if (cin != f) add_conv(out, p + "/proj", 1, cin, f);
    }
    ch = f;
  }
  for (int j = cfg.n_scales - 1; j >= 0; --j)
    add_conv(out, names::score_conv(j), 1, static_cast<std::size_t>(cfg.filters(j)),
             static_cast<std::size_t>(cfg.n_classes));
  return out;
}

template <typename T> Tensor<T> &NetParams<T>::at(const std::string &name) {
  const auto it = tensors.find(name);
  if (it == tensors.end()) raise(Errc::BadCheckpoint, "missing parameter tensor " + name);
  return it->second;
}

template <typename T> const Tensor<T> &NetParams<T>::at(const std::string &name) const {
  const auto it = tensors.find(name);
  if (it == tensors.end()) raise(Errc::BadCheckpoint, "missing parameter tensor " + name);
  return it->second;
}

template struct NetParams<float>;
template struct NetParams<double>;

} // namespace brainseg::nn
