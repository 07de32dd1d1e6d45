#include "l2e/param_store.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

namespace l2e {

void ParamStore::add(std::string path, Tensor value, bool trainable) {
  if (index_.count(path)) throw ContractError("duplicate parameter path '" + path + "'");
  index_.emplace(path, entries_.size());
  entries_.push_back({std::move(path), std::move(value), trainable});
}

const Tensor& ParamStore::get(const std::string& path) const {
  auto it = index_.find(path);
  if (it == index_.end()) throw ContractError("unknown parameter path '" + path + "'");
  return entries_[it->second].value;
}

void ParamStore::set(const std::string& path, Tensor value) {
  auto it = index_.find(path);
  if (it == index_.end()) throw ContractError("unknown parameter path '" + path + "'");
  auto& e = entries_[it->second];
  if (e.value.shape() != value.shape())
    throw DimensionError("parameter '" + path + "' has shape " + to_string(e.value.shape()) + ", got " +
                         to_string(value.shape()));
  e.value = value.detached();
}

std::size_t ParamStore::trainable_scalars() const {
  std::size_t n = 0;
  for (const auto& e : entries_)
    if (e.trainable) n += e.value.size();
  return n;
}

ParamStore ParamStore::bind(Tape& tape) const {
  ParamStore out = *this;
  for (auto& e : out.entries_)
    if (e.trainable) e.value = tape.watch(e.value, e.path);
  return out;
}

bool ParamStore::operator==(const ParamStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.path != b.path || a.trainable != b.trainable || a.value.shape() != b.value.shape() ||
        a.value.values() != b.value.values())
      return false;
  }
  return true;
}

GradientMap backward(const Tensor& loss, const ParamStore& bound) {
  GradientMap out;
  if (!loss.tracked()) {
    if (loss.size() != 1) throw ContractError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
    for (const auto& e : bound.entries())
      if (e.trainable) out.emplace(e.path, Tensor(e.value.shape(), 0.0));
    return out;
  }
  Gradients g = loss.tape()->backward(loss);
  for (const auto& e : bound.entries())
    if (e.trainable) out.emplace(e.path, g.of(e.value));
  return out;
}

double global_norm(const GradientMap& grads) {
  double s = 0;
  for (const auto& [_, g] : grads)
    for (double v : g.data()) s += v * v;
  return std::sqrt(s);
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace {

constexpr char kMagic[8] = {'L', '2', 'E', 'C', 'K', 'P', 'T', '\0'};

template <class T>
void put_le(std::ostream& os, T v) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
  U u = std::bit_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(U); ++i) os.put(static_cast<char>((u >> (8 * i)) & 0xFF));
}

template <class T>
T get_le(std::istream& is) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
  U u = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    const int c = is.get();
    if (c == EOF) throw ContractError("truncated checkpoint");
    u |= static_cast<U>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return std::bit_cast<T>(u);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& file, const ParamStore& store,
                     const std::map<std::string, std::string>& manifest) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream os(file, std::ios::binary);
  if (!os) throw ContractError("cannot write checkpoint " + file.string());
  os.write(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(os, kCheckpointVersion);
  put_le<std::uint64_t>(os, store.size());
  for (const auto& e : store.entries()) {
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.path.size()));
    os.write(e.path.data(), static_cast<std::streamsize>(e.path.size()));
    put_le<std::uint8_t>(os, e.trainable ? 1 : 0);
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.value.rank()));
    for (auto d : e.value.shape()) put_le<std::uint64_t>(os, d);
    for (double v : e.value.data()) put_le<double>(os, v);
  }
  std::ofstream ms(file.string() + ".manifest");
  ms << "format_version=" << kCheckpointVersion << '\n';
  ms << "parameters=" << store.size() << '\n';
  ms << "scalars=" << store.trainable_scalars() << '\n';
  for (const auto& [k, v] : manifest) ms << k << '=' << v << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw ContractError("cannot open checkpoint " + file.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || !std::equal(magic, magic + 8, kMagic)) throw ContractError(file.string() + " is not an l2e checkpoint");
  const auto version = get_le<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw ContractError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  const auto count = get_le<std::uint64_t>(is);
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto len = get_le<std::uint32_t>(is);
    std::string path(len, '\0');
    is.read(path.data(), len);
    const bool trainable = get_le<std::uint8_t>(is) != 0;
    const auto rank = get_le<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get_le<std::uint64_t>(is));
    std::vector<double> data(numel(shape));
    for (auto& v : data) v = get_le<double>(is);
    ck.params.add(std::move(path), Tensor(std::move(shape), std::move(data)), trainable);
  }
  std::ifstream ms(file.string() + ".manifest");
  std::string line;
  while (std::getline(ms, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    ck.manifest[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return ck;
}

}  // namespace l2e
