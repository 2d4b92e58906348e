#include "brainseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include "brainseg/error.hpp"

namespace brainseg::nn {

namespace {

constexpr char kMagic[4] = {'N', 'N', 'L', '1'};
constexpr std::uint8_t kDtypeF32 = 1;
const std::string kMomentPrefix1 = "adam/m/";
const std::string kMomentPrefix2 = "adam/v/";
const std::string kStepRecord = "adam/step";

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
public:
  template <typename T> void put(T value) {
    const auto *p = reinterpret_cast<const char *>(&value);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void bytes(const void *data, std::size_t n) {
    const auto *p = static_cast<const char *>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  void record(const std::string &name, const Tensor<float> &t) {
    put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    bytes(name.data(), name.size());
    put<std::uint8_t>(kDtypeF32);
    put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(d);
    bytes(t.ptr(), t.size() * sizeof(float));
  }
  const std::vector<char> &buffer() const { return buf_; }

private:
  std::vector<char> buf_;
};

class Reader {
public:
  explicit Reader(std::vector<char> data) : data_(std::move(data)) {}

  template <typename T> T get(const char *what) {
    T value;
    take(&value, sizeof(T), what);
    return value;
  }
  void take(void *dst, std::size_t n, const char *what) {
    if (n > data_.size() - pos_) raise(Errc::CorruptRecord, std::string("truncated while reading ") + what);
    std::memcpy(dst, data_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t remaining() const { return data_.size() - pos_; }

private:
  std::vector<char> data_;
  std::size_t pos_ = 0;
};

} // namespace

void save_checkpoint(const NetParams<float> &params, const AdamState *state, const std::filesystem::path &path) {
  Writer w;
  w.bytes(kMagic, 4);
  std::uint32_t count = static_cast<std::uint32_t>(params.tensors.size());
  if (state) count += static_cast<std::uint32_t>(state->m.size() + state->v.size() + 1);
  w.put<std::uint32_t>(count);
  for (const auto &[name, t] : params.tensors) w.record(name, t);
  if (state) {
    for (const auto &[name, t] : state->m) w.record(kMomentPrefix1 + name, t);
    for (const auto &[name, t] : state->v) w.record(kMomentPrefix2 + name, t);
    w.record(kStepRecord, Tensor<float>({1}, static_cast<float>(state->step)));
  }
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) raise(Errc::IoError, "cannot open " + tmp + " for writing");
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!out) raise(Errc::IoError, "write failure on " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) raise(Errc::IoError, "cannot move checkpoint into place at " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Errc::IoError, "cannot open checkpoint " + path.string());
  std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < 4 || std::memcmp(data.data(), kMagic, 4) != 0)
    raise(Errc::BadMagic, path.string() + " is not an NNL1 checkpoint");
  Reader r(std::move(data));
  char magic[4];
  r.take(magic, 4, "magic");
  const auto count = r.get<std::uint32_t>("record count");
  Checkpoint ckpt;
  AdamState state;
  bool has_state = false;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>("name length");
    if (name_len > r.remaining()) raise(Errc::CorruptRecord, "name length exceeds file size");
    std::string name(name_len, '\0');
    r.take(name.data(), name_len, "name");
    const auto dtype = r.get<std::uint8_t>("dtype");
    if (dtype != kDtypeF32) raise(Errc::CorruptRecord, "unsupported dtype tag in record " + name);
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank > 8) raise(Errc::CorruptRecord, "implausible rank in record " + name);
    Shape shape(rank);
    for (auto &d : shape) d = r.get<std::uint64_t>("dims");
    const std::size_t n = shape_size(shape);
    if (n > r.remaining() / sizeof(float)) raise(Errc::CorruptRecord, "truncated data in record " + name);
    Tensor<float> t(shape);
    r.take(t.ptr(), n * sizeof(float), "tensor data");
    if (name == kStepRecord) {
      state.step = static_cast<std::uint64_t>(t[0]);
      has_state = true;
    } else if (name.rfind(kMomentPrefix1, 0) == 0) {
      state.m.emplace(name.substr(kMomentPrefix1.size()), std::move(t));
      has_state = true;
    } else if (name.rfind(kMomentPrefix2, 0) == 0) {
      state.v.emplace(name.substr(kMomentPrefix2.size()), std::move(t));
      has_state = true;
    } else {
      ckpt.params.tensors.emplace(std::move(name), std::move(t));
    }
  }
  if (r.remaining() != 0) raise(Errc::CorruptRecord, "trailing bytes after the last record");
  if (has_state) ckpt.state = std::move(state);
  return ckpt;
}

} // namespace brainseg::nn
