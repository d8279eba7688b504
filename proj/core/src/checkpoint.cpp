#include "diffcod/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "diffcod/errors.hpp"

namespace diffcod {

namespace {

constexpr std::array<char, 8> kMagic{'D', 'I', 'F', 'F', 'C', 'O', 'D', '\0'};

template <typename U>
void put(std::ostream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  template <typename U>
  U get() {
    U v{};
    read(&v, sizeof v);
    return v;
  }

  std::string get_string(std::uint64_t limit = 1u << 26) {
    const auto n = get<std::uint64_t>();
    if (n > limit) fail("string length out of range");
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }

  void read(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) fail("truncated file");
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw IoError("corrupt checkpoint " + source_ + ": " + what);
  }

 private:
  std::istream& in_;
  std::string source_;
};

}  // namespace

const Tensor<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(kMagic.data(), kMagic.size());
    put<std::uint32_t>(out, ckpt.version);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(ckpt.step));
    put_string(out, format_key_values(ckpt.config));
    put<std::uint64_t>(out, ckpt.tensors.size());
    for (const auto& [name, t] : ckpt.tensors) {
      put_string(out, name);
      put<std::uint32_t>(out, static_cast<std::uint32_t>(t.ndim()));
      for (int d : t.shape()) put<std::int32_t>(out, d);
      out.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(float)));
    }
    if (!out) throw IoError("cannot write checkpoint " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot write checkpoint " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  Reader r(in, path.string());
  std::array<char, 8> magic{};
  r.read(magic.data(), magic.size());
  if (magic != kMagic) r.fail("bad magic");
  Checkpoint ckpt;
  ckpt.version = r.get<std::uint32_t>();
  if (ckpt.version != kCheckpointFormatVersion) {
    r.fail("unsupported format version " + std::to_string(ckpt.version));
  }
  ckpt.step = static_cast<long>(r.get<std::uint64_t>());
  ckpt.config = parse_key_values(r.get_string());
  const auto count = r.get<std::uint64_t>();
  if (count > (1u << 20)) r.fail("tensor count out of range");
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.get_string(4096);
    const auto ndim = r.get<std::uint32_t>();
    if (ndim > 8) r.fail("rank out of range for " + name);
    Shape shape(ndim);
    for (auto& d : shape) {
      d = r.get<std::int32_t>();
      if (d < 0) r.fail("negative dimension for " + name);
    }
    Tensor<float> t(shape);
    r.read(t.data(), t.size() * sizeof(float));
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

}  // namespace diffcod
