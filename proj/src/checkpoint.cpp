#include "detservo/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "detservo/binary_io.hpp"

namespace detservo {

namespace {

constexpr char kMagic[8] = {'D', 'S', 'R', 'V', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

std::string encode_metadata(const Checkpoint& c) {
  const auto& m = c.net.config();
  std::ostringstream s;
  s.precision(17);
  s << "variant=" << to_string(c.variant) << '\n'
    << "architecture=" << model::to_string(m.architecture) << '\n'
    << "image_height=" << m.image_height << '\n'
    << "image_width=" << m.image_width << '\n'
    << "channels=" << m.channels << '\n'
    << "token_grid=" << m.token_grid << '\n'
    << "conv_channels=";
  for (std::size_t i = 0; i < m.conv_channels.size(); ++i) s << (i ? " " : "") << m.conv_channels[i];
  s << '\n'
    << "embed_dim=" << m.embed_dim << '\n'
    << "attention_heads=" << m.attention_heads << '\n'
    << "ffn_dim=" << m.ffn_dim << '\n'
    << "encoder_layers=" << m.encoder_layers << '\n'
    << "decoder_layers=" << m.decoder_layers << '\n'
    << "perception_heads=" << m.perception_heads << '\n'
    << "mlp_hidden=" << m.mlp_hidden << '\n'
    << "input_center=" << m.input_center << '\n'
    << "input_scale=" << m.input_scale << '\n'
    << "position_scale=" << m.position_scale << '\n'
    << "loss_k=" << c.loss.k << '\n'
    << "loss_uniform_weight=" << (c.loss.uniform_weight ? 1 : 0) << '\n'
    << "bank_size=" << c.bank.size() << '\n';
  for (std::size_t h = 0; h < c.bank.size(); ++h) {
    const auto& b = c.bank[h];
    s << "head" << h << '=' << b.mu << ' ' << b.sigma << ' ' << b.alpha << ' ' << b.lo << ' ' << b.hi << '\n';
  }
  return s.str();
}

std::map<std::string, std::string> parse_metadata(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kMph: return "mph";
    case Variant::kSph: return "sph";
    case Variant::kPlain: return "plain";
  }
  return "mph";
}

Variant variant_from_string(const std::string& s) {
  if (s == "mph") return Variant::kMph;
  if (s == "sph") return Variant::kSph;
  if (s == "plain") return Variant::kPlain;
  throw std::invalid_argument("unknown variant '" + s + "' (expected mph, sph or plain)");
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  binary::put(out, kVersion);
  binary::put_string(out, encode_metadata(c));
  const auto& p = c.net.params();
  binary::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.size()));
  for (std::size_t i = 0; i < p.size(); ++i) {
    binary::put_string(out, p.name(i));
    binary::put<std::uint32_t>(out, static_cast<std::uint32_t>(p[i].rows()));
    binary::put<std::uint32_t>(out, static_cast<std::uint32_t>(p[i].cols()));
    binary::put_array(out, p[i].data(), static_cast<std::size_t>(p[i].size()));
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error(path.string() + " is not a checkpoint file");
  }
  if (binary::get<std::uint32_t>(in) != kVersion) throw std::runtime_error("unsupported checkpoint version");
  auto kv = parse_metadata(binary::get_string(in));
  auto need = [&](const std::string& k) -> const std::string& {
    const auto it = kv.find(k);
    if (it == kv.end()) throw std::runtime_error("checkpoint metadata lacks '" + k + "'");
    return it->second;
  };

  model::ModelConfig m;
  m.architecture = model::architecture_from_string(need("architecture"));
  m.image_height = std::stoi(need("image_height"));
  m.image_width = std::stoi(need("image_width"));
  m.channels = std::stoi(need("channels"));
  m.token_grid = std::stoi(need("token_grid"));
  m.conv_channels.clear();
  {
    std::istringstream cs(need("conv_channels"));
    int v;
    while (cs >> v) m.conv_channels.push_back(v);
  }
  m.embed_dim = std::stoi(need("embed_dim"));
  m.attention_heads = std::stoi(need("attention_heads"));
  m.ffn_dim = std::stoi(need("ffn_dim"));
  m.encoder_layers = std::stoi(need("encoder_layers"));
  m.decoder_layers = std::stoi(need("decoder_layers"));
  m.perception_heads = std::stoi(need("perception_heads"));
  m.mlp_hidden = std::stoi(need("mlp_hidden"));
  m.input_center = std::stod(need("input_center"));
  m.input_scale = std::stod(need("input_scale"));
  m.position_scale = std::stod(need("position_scale"));

  std::vector<mph::PerceptionHeadSpec> heads;
  const int nb = std::stoi(need("bank_size"));
  for (int h = 0; h < nb; ++h) {
    std::istringstream hs(need("head" + std::to_string(h)));
    mph::PerceptionHeadSpec spec;
    if (!(hs >> spec.mu >> spec.sigma >> spec.alpha >> spec.lo >> spec.hi)) {
      throw std::runtime_error("malformed head entry in checkpoint");
    }
    heads.push_back(spec);
  }

  Checkpoint c{variant_from_string(need("variant")), mph::HeadBank(heads),
               {std::stod(need("loss_k")), need("loss_uniform_weight") == "1"}, model::DistanceEstimator(m)};
  auto& p = c.net.params();
  const auto count = binary::get<std::uint32_t>(in);
  if (count != p.size()) throw std::runtime_error("checkpoint tensor count does not match the model");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = binary::get_string(in);
    const auto idx = p.find(name);
    if (!idx) throw std::runtime_error("checkpoint has unknown tensor " + name);
    const auto rows = binary::get<std::uint32_t>(in);
    const auto cols = binary::get<std::uint32_t>(in);
    if (rows != p[*idx].rows() || cols != p[*idx].cols()) throw std::runtime_error("shape mismatch for " + name);
    binary::get_array(in, p[*idx].data(), static_cast<std::size_t>(p[*idx].size()));
  }
  return c;
}

}  // namespace detservo
