#include "tmcl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tmcl/errors.hpp"

namespace tmcl {

namespace {

constexpr char kMagic[8] = {'T', 'M', 'C', 'L', 'C', 'K', 'P', 'T'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint64_t u64() { return read_le(8); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(read_le(4)); }
  double f64() { return std::bit_cast<double>(read_le(8)); }
  std::string take(std::uint64_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  void need(std::uint64_t n) const {
    if (n > remaining()) throw CheckpointError(CheckpointErrorCode::Corrupt, "corrupt checkpoint: truncated");
  }

 private:
  std::uint64_t read_le(int width) {
    need(static_cast<std::uint64_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

nlohmann::json net_manifest(const nn::DenseNet& net) {
  auto layers = nlohmann::json::array();
  for (const auto& l : net.layers()) {
    layers.push_back({{"in", l.in_width()}, {"out", l.out_width()}, {"activation", nn::to_string(l.activation)}});
  }
  return layers;
}

nlohmann::json head_manifest(const nn::GaussianHead& head) {
  return {{"in", head.input_width()}, {"out", head.output_width()}};
}

[[noreturn]] void inconsistent(const std::string& what) {
  throw CheckpointError(CheckpointErrorCode::ManifestInconsistent, "checkpoint manifest inconsistent: " + what);
}

nn::DenseNet net_from_manifest(const nlohmann::json& j) {
  if (!j.is_array()) inconsistent("network entry is not a layer list");
  std::vector<nn::DenseLayer> layers;
  for (const auto& l : j) {
    const auto in = l.at("in").get<Eigen::Index>();
    const auto out = l.at("out").get<Eigen::Index>();
    if (in < 1 || out < 1) inconsistent("layer widths must be positive");
    layers.push_back(nn::DenseLayer::zeros(in, out, nn::activation_from_string(l.at("activation").get<std::string>())));
  }
  return nn::DenseNet(std::move(layers));
}

nn::GaussianHead head_from_manifest(const nlohmann::json& j, const nn::VarianceBounds& bounds) {
  const auto in = j.at("in").get<Eigen::Index>();
  const auto out = j.at("out").get<Eigen::Index>();
  if (in < 1 || out < 1) inconsistent("head widths must be positive");
  return nn::GaussianHead(nn::DenseLayer::zeros(in, out, nn::Activation::Identity),
                          nn::DenseLayer::zeros(in, out, nn::Activation::Identity), bounds);
}

void put_vector(std::vector<double>& out, const Eigen::VectorXd& v) {
  out.insert(out.end(), v.data(), v.data() + v.size());
}

Eigen::VectorXd take_vector(std::span<const double>& in, Eigen::Index n) {
  Eigen::VectorXd v(n);
  std::memcpy(v.data(), in.data(), static_cast<std::size_t>(n) * sizeof(double));
  in = in.subspan(static_cast<std::size_t>(n));
  return v;
}

}  // namespace

std::string to_string(CheckpointErrorCode code) {
  switch (code) {
    case CheckpointErrorCode::Io: return "io";
    case CheckpointErrorCode::Corrupt: return "corrupt";
    case CheckpointErrorCode::VersionMismatch: return "version_mismatch";
    case CheckpointErrorCode::ManifestInconsistent: return "manifest_inconsistent";
  }
  return "unknown";
}

CheckpointError::CheckpointError(CheckpointErrorCode code, const std::string& what)
    : std::runtime_error(what), code_(code) {}

nlohmann::json model_manifest(const MultiHeadDynamicsModel& model) {
  nlohmann::json j;
  j["state_dim"] = model.state_dim();
  j["action_dim"] = model.action_dim();
  j["num_heads"] = model.num_heads();
  j["context_window"] = model.context_window();
  j["variance_bounds"] = {model.heads().front().bounds().min_variance, model.heads().front().bounds().max_variance};
  j["backbone"] = net_manifest(model.backbone());
  auto heads = nlohmann::json::array();
  for (const auto& h : model.heads()) heads.push_back(head_manifest(h));
  j["heads"] = heads;
  j["encoder"] = net_manifest(model.encoder());
  j["backward_net"] = net_manifest(model.backward_net());
  j["backward_head"] = model.has_context() ? head_manifest(model.backward_head()) : nlohmann::json(nullptr);
  j["parameter_count"] = model.parameter_count();
  return j;
}

std::string serialize_checkpoint(std::span<const MultiHeadDynamicsModel> members, const nlohmann::json& metadata) {
  nlohmann::json manifest;
  manifest["format"] = "tmcl-checkpoint";
  manifest["metadata"] = metadata;
  manifest["members"] = nlohmann::json::array();
  std::vector<double> values;
  for (const auto& m : members) {
    manifest["members"].push_back(model_manifest(m));
    const auto& n = m.normalizer();
    for (const auto* v : {&n.state_mean, &n.state_std, &n.action_mean, &n.action_std, &n.delta_mean, &n.delta_std}) {
      put_vector(values, *v);
    }
    put_vector(values, m.parameters());
  }
  const std::string text = manifest.dump();
  std::string out(kMagic, sizeof(kMagic));
  put_u32(out, kCheckpointVersion);
  put_u64(out, text.size());
  out += text;
  put_u64(out, values.size());
  for (double v : values) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  const std::string magic = r.take(sizeof(kMagic));
  if (magic != std::string(kMagic, sizeof(kMagic))) {
    throw CheckpointError(CheckpointErrorCode::Corrupt, "corrupt checkpoint: bad magic");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointErrorCode::VersionMismatch,
                          "checkpoint version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t manifest_len = r.u64();
  const std::string text = r.take(manifest_len);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    throw CheckpointError(CheckpointErrorCode::Corrupt, "corrupt checkpoint: unreadable manifest");
  }
  const std::uint64_t count = r.u64();
  if (count > r.remaining() / 8) throw CheckpointError(CheckpointErrorCode::Corrupt, "corrupt checkpoint: truncated");
  std::vector<double> values(count);
  for (auto& v : values) v = r.f64();
  if (r.remaining() != 0) throw CheckpointError(CheckpointErrorCode::Corrupt, "corrupt checkpoint: trailing bytes");

  Checkpoint ck;
  std::span<const double> in(values);
  try {
    ck.metadata = manifest.value("metadata", nlohmann::json::object());
    const auto& members = manifest.at("members");
    if (!members.is_array() || members.empty()) inconsistent("no members");
    for (const auto& mj : members) {
      const int heads_declared = mj.at("num_heads").get<int>();
      const auto& heads = mj.at("heads");
      if (!heads.is_array() || static_cast<int>(heads.size()) != heads_declared) {
        inconsistent("declares H=" + std::to_string(heads_declared) + " but has " +
                     std::to_string(heads.is_array() ? heads.size() : 0) + " head blocks");
      }
      const int ds = mj.at("state_dim").get<int>();
      const int da = mj.at("action_dim").get<int>();
      if (ds < 1 || da < 1) inconsistent("state and action widths must be positive");
      nn::VarianceBounds bounds{mj.at("variance_bounds").at(0).get<double>(),
                                mj.at("variance_bounds").at(1).get<double>()};
      ModelComponents parts;
      parts.backbone = net_from_manifest(mj.at("backbone"));
      for (const auto& h : heads) parts.heads.push_back(head_from_manifest(h, bounds));
      parts.encoder = net_from_manifest(mj.at("encoder"));
      parts.backward_net = net_from_manifest(mj.at("backward_net"));
      if (!mj.at("backward_head").is_null()) parts.backward_head = head_from_manifest(mj.at("backward_head"), bounds);
      parts.context_window = mj.at("context_window").get<int>();

      const std::size_t normalizer_values = 4 * static_cast<std::size_t>(ds) + 2 * static_cast<std::size_t>(da);
      if (in.size() < normalizer_values) inconsistent("value count does not match the declared shapes");
      Normalizer& n = parts.normalizer;
      n.state_mean = take_vector(in, ds);
      n.state_std = take_vector(in, ds);
      n.action_mean = take_vector(in, da);
      n.action_std = take_vector(in, da);
      n.delta_mean = take_vector(in, ds);
      n.delta_std = take_vector(in, ds);

      MultiHeadDynamicsModel model(std::move(parts));
      if (mj.contains("parameter_count") && mj.at("parameter_count").get<std::size_t>() != model.parameter_count()) {
        inconsistent("parameter count does not match the declared shapes");
      }
      if (in.size() < model.parameter_count()) inconsistent("value count does not match the declared shapes");
      model.set_parameters(take_vector(in, static_cast<Eigen::Index>(model.parameter_count())));
      model.set_normalizer(model.normalizer());  // rejects non-positive stds
      ck.members.push_back(std::move(model));
    }
  } catch (const nlohmann::json::exception& e) {
    inconsistent(e.what());
  } catch (const ConfigurationError& e) {
    inconsistent(e.what());
  }
  if (!in.empty()) inconsistent("value count does not match the declared shapes");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, std::span<const MultiHeadDynamicsModel> members,
                     const nlohmann::json& metadata) {
  const std::string bytes = serialize_checkpoint(members, metadata);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(CheckpointErrorCode::Io, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError(CheckpointErrorCode::Io, "failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError(CheckpointErrorCode::Io, "cannot move checkpoint into " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointErrorCode::Io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace tmcl
