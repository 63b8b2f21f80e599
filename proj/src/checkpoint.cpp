#include "mtvnet/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mtvnet/io_util.hpp"

namespace mtvnet {

namespace {

constexpr const char* kMagic = "MTVCKPT1";

static_assert(std::endian::native == std::endian::little, "checkpoint payloads are stored little-endian");

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    default: throw std::invalid_argument("checkpoint: unsupported tensor dtype");
  }
}

torch::ScalarType dtype_from(const std::string& s) {
  if (s == "f32") return torch::kFloat32;
  if (s == "f64") return torch::kFloat64;
  if (s == "i64") return torch::kInt64;
  throw std::runtime_error("checkpoint: unknown dtype '" + s + "'");
}

void write_blob(std::ostream& out, const std::string& key, const std::string& text) {
  out << key << ' ' << text.size() << '\n';
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

std::string read_line(std::istream& in, const std::filesystem::path& path) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("checkpoint " + path.string() + ": truncated header");
  return line;
}

std::string read_blob(std::istream& in, const std::string& key, const std::filesystem::path& path) {
  std::istringstream hdr(read_line(in, path));
  std::string k;
  std::size_t n = 0;
  if (!(hdr >> k >> n) || k != key) throw std::runtime_error("checkpoint " + path.string() + ": expected " + key);
  std::string text(n, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(n))) {
    throw std::runtime_error("checkpoint " + path.string() + ": truncated " + key);
  }
  return text;
}

struct TensorHeader {
  std::string name;
  torch::ScalarType dtype = torch::kFloat32;
  std::vector<std::int64_t> shape;
  std::int64_t bytes = 0;
};

TensorHeader parse_tensor_header(const std::string& line, const std::filesystem::path& path) {
  std::istringstream in(line);
  std::string tag, dt;
  TensorHeader h;
  std::size_t rank = 0;
  if (!(in >> tag >> h.name >> dt >> rank) || tag != "tensor") {
    throw std::runtime_error("checkpoint " + path.string() + ": malformed tensor header '" + line + "'");
  }
  h.dtype = dtype_from(dt);
  h.shape.resize(rank);
  for (auto& d : h.shape) in >> d;
  if (!(in >> h.bytes)) throw std::runtime_error("checkpoint " + path.string() + ": malformed tensor header");
  std::int64_t numel = 1;
  for (auto d : h.shape) numel *= d;
  if (numel * static_cast<std::int64_t>(torch::elementSize(h.dtype)) != h.bytes) {
    throw std::runtime_error("checkpoint " + path.string() + ": size mismatch for " + h.name);
  }
  return h;
}

// Shared header walk; `payload` either reads or skips each tensor's bytes.
template <typename F>
Checkpoint walk(const std::filesystem::path& path, F&& payload) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  if (read_line(in, path) != kMagic) throw std::runtime_error(path.string() + " is not a checkpoint (bad magic)");
  Checkpoint ck;
  {
    std::istringstream it(read_line(in, path));
    std::string k;
    if (!(it >> k >> ck.iteration) || k != "iteration") {
      throw std::runtime_error("checkpoint " + path.string() + ": missing iteration");
    }
  }
  ck.config_text = read_blob(in, "config", path);
  ck.rng_state = read_blob(in, "rng", path);
  std::size_t count = 0;
  {
    std::istringstream it(read_line(in, path));
    std::string k;
    if (!(it >> k >> count) || k != "tensors") throw std::runtime_error("checkpoint " + path.string() + ": missing tensors");
  }
  for (std::size_t i = 0; i < count; ++i) {
    auto h = parse_tensor_header(read_line(in, path), path);
    ck.tensors.emplace_back(h.name, payload(in, h));
  }
  if (read_line(in, path) != "end") throw std::runtime_error("checkpoint " + path.string() + ": missing end marker");
  return ck;
}

}  // namespace

const torch::Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  atomic_write(path, [&](std::ostream& out) {
    out << kMagic << '\n' << "iteration " << ckpt.iteration << '\n';
    write_blob(out, "config", ckpt.config_text);
    write_blob(out, "rng", ckpt.rng_state);
    out << "tensors " << ckpt.tensors.size() << '\n';
    for (const auto& [name, t] : ckpt.tensors) {
      if (name.find_first_of(" \n\t") != std::string::npos) {
        throw std::invalid_argument("checkpoint: tensor name contains whitespace: " + name);
      }
      auto c = t.detach().cpu().contiguous();
      const auto bytes = static_cast<std::int64_t>(c.numel() * c.element_size());
      out << "tensor " << name << ' ' << dtype_name(c.scalar_type()) << ' ' << c.dim();
      for (auto d : c.sizes()) out << ' ' << d;
      out << ' ' << bytes << '\n';
      out.write(static_cast<const char*>(c.data_ptr()), bytes);
    }
    out << "end\n";
  });
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return walk(path, [&](std::istream& in, const TensorHeader& h) {
    auto t = torch::empty(h.shape, torch::TensorOptions().dtype(h.dtype));
    if (!in.read(static_cast<char*>(t.data_ptr()), h.bytes)) {
      throw std::runtime_error("checkpoint " + path.string() + ": truncated payload for " + h.name);
    }
    return t;
  });
}

std::vector<std::pair<std::string, std::vector<std::int64_t>>> read_manifest(const std::filesystem::path& path) {
  std::vector<std::pair<std::string, std::vector<std::int64_t>>> out;
  walk(path, [&](std::istream& in, const TensorHeader& h) {
    in.seekg(h.bytes, std::ios::cur);
    out.emplace_back(h.name, h.shape);
    return torch::Tensor{};
  });
  return out;
}

NamedTensors module_state(torch::nn::Module& module) {
  NamedTensors out;
  for (const auto& item : module.named_parameters()) out.emplace_back("param:" + item.key(), item.value());
  return out;
}

void load_module_state(torch::nn::Module& module, const Checkpoint& ckpt) {
  torch::NoGradGuard guard;
  std::size_t expected = 0;
  for (auto& item : module.named_parameters()) {
    ++expected;
    const auto* t = ckpt.find("param:" + item.key());
    if (t == nullptr) throw std::runtime_error("checkpoint is missing parameter " + item.key());
    if (t->sizes() != item.value().sizes()) {
      throw std::runtime_error("checkpoint parameter " + item.key() + " has a different shape");
    }
    item.value().copy_(*t);
  }
  std::size_t stored = 0;
  for (const auto& [n, t] : ckpt.tensors)
    if (n.rfind("param:", 0) == 0) ++stored;
  if (stored != expected) throw std::runtime_error("checkpoint holds parameters the model does not have");
}

}  // namespace mtvnet
