#include "cladec/state.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <unistd.h>

namespace cladec {
namespace {

constexpr char kMagic[8] = {'C', 'L', 'D', 'C', 'K', 'P', 'T', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    std::uint32_t v;
    std::memcpy(&v, take(4), 4);
    return v;
  }
  std::string str(std::size_t n) { return std::string(take(n), n); }
  const char* take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw std::runtime_error("archive truncated");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

StateDict snapshot(nn::Layer& layer, const std::string& prefix) {
  nn::StateRefs refs;
  layer.collect_state(prefix, refs);
  StateDict out;
  out.reserve(refs.size());
  for (auto& [name, t] : refs) out.push_back({name, *t});
  return out;
}

void restore(nn::Layer& layer, const StateDict& state, const std::string& prefix) {
  std::map<std::string, const Tensor*> index;
  for (const auto& e : state) index[e.name] = &e.tensor;
  nn::StateRefs refs;
  layer.collect_state(prefix, refs);
  for (auto& [name, t] : refs) {
    auto it = index.find(name);
    if (it == index.end()) throw ShapeError("state entry missing: " + name);
    if (it->second->shape() != t->shape()) {
      throw ShapeError("state entry " + name + " has shape " + to_string(it->second->shape()) +
                       ", model expects " + to_string(t->shape()));
    }
    *t = *it->second;
  }
}

std::string encode_archive(const Archive& archive) {
  std::string out(kMagic, sizeof(kMagic));
  put_u32(out, static_cast<std::uint32_t>(archive.meta_json.size()));
  out += archive.meta_json;
  put_u32(out, static_cast<std::uint32_t>(archive.state.size()));
  for (const auto& [name, t] : archive.state) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(float));
  }
  return out;
}

Archive decode_archive(const std::string& bytes) {
  Reader r(bytes);
  if (std::memcmp(r.take(sizeof(kMagic)), kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("not a checkpoint archive (bad magic)");
  }
  Archive a;
  a.meta_json = r.str(r.u32());
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor e;
    e.name = r.str(r.u32());
    Shape shape(r.u32());
    for (int& d : shape) d = static_cast<int>(r.u32());
    std::vector<float> v(volume(shape));
    std::memcpy(v.data(), r.take(v.size() * sizeof(float)), v.size() * sizeof(float));
    e.tensor = Tensor(std::move(shape), std::move(v));
    a.state.push_back(std::move(e));
  }
  if (!r.done()) throw std::runtime_error("trailing bytes in checkpoint archive");
  return a;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::random_device rd;
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(rd());
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  write_file_atomic(path, encode_archive(archive));
}

Archive read_archive(const std::filesystem::path& path) { return decode_archive(read_file(path)); }

}  // namespace cladec
