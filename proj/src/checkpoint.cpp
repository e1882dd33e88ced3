#include "t2t/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <zlib.h>

namespace t2t {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'T', '2', 'T', 'C', 'K', 'P', 'T', '\0'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
    uLong crc = crc32(0L, Z_NULL, 0);
    while (n > 0) {
        const uInt chunk = uInt(std::min<std::size_t>(n, 1u << 30));
        crc = crc32(crc, data, chunk);
        data += chunk;
        n -= chunk;
    }
    return std::uint32_t(crc);
}

std::size_t element_count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 1) throw CheckpointError("checkpoint: non-positive dimension");
        n *= std::size_t(d);
    }
    return n;
}

}  // namespace

const CheckpointArray& Checkpoint::array(const std::string& name) const {
    for (const auto& a : arrays)
        if (a.name == name) return a;
    throw CheckpointError("checkpoint has no array named " + name);
}

json config_to_json(const ModelConfig& c) {
    return json{{"patch", c.patch},
                {"dim", c.dim},
                {"heads", c.heads},
                {"depth", c.depth},
                {"text_vocab", c.text_vocab},
                {"max_text_tokens", c.max_text_tokens},
                {"lora_rank", c.lora_rank},
                {"lora_alpha", c.lora_alpha},
                {"ffn_mult", c.ffn_mult},
                {"max_height", c.max_height},
                {"max_width", c.max_width},
                {"predict_clean", c.predict_clean}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.patch = j.at("patch").get<int>();
    c.dim = j.at("dim").get<int>();
    c.heads = j.at("heads").get<int>();
    c.depth = j.at("depth").get<int>();
    c.text_vocab = j.at("text_vocab").get<int>();
    c.max_text_tokens = j.at("max_text_tokens").get<int>();
    c.lora_rank = j.at("lora_rank").get<int>();
    c.lora_alpha = j.at("lora_alpha").get<double>();
    c.ffn_mult = j.at("ffn_mult").get<int>();
    c.max_height = j.at("max_height").get<int>();
    c.max_width = j.at("max_width").get<int>();
    c.predict_clean = j.value("predict_clean", false);
    return c;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
    json manifest;
    manifest["format_version"] = kCheckpointFormatVersion;
    manifest["kind"] = ckpt.kind;
    manifest["model_config"] = config_to_json(ckpt.config);
    manifest["state"] = ckpt.state;
    json arrays = json::array();
    std::size_t offset = 0;
    for (const auto& a : ckpt.arrays) {
        if (element_count(a.shape) != a.data.size())
            throw CheckpointError("checkpoint array " + a.name + ": shape does not match data");
        arrays.push_back({{"name", a.name}, {"shape", a.shape}, {"dtype", "f32"}, {"offset", offset}});
        offset += a.data.size() * sizeof(float);
    }
    manifest["arrays"] = arrays;

    std::vector<std::uint8_t> payload(offset);
    std::size_t pos = 0;
    for (const auto& a : ckpt.arrays) {
        std::memcpy(payload.data() + pos, a.data.data(), a.data.size() * sizeof(float));
        pos += a.data.size() * sizeof(float);
    }
    manifest["payload_bytes"] = payload.size();
    manifest["payload_crc32"] = crc_of(payload.data(), payload.size());

    const std::string text = manifest.dump();
    std::vector<std::uint8_t> out;
    out.reserve(16 + text.size() + payload.size());
    out.insert(out.end(), kMagic, kMagic + 8);
    const std::uint64_t len = text.size();
    for (int i = 0; i < 8; ++i) out.push_back(std::uint8_t(len >> (8 * i)));
    out.insert(out.end(), text.begin(), text.end());
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0)
        throw CheckpointError("not a checkpoint (bad magic)");
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= std::uint64_t(bytes[8 + std::size_t(i)]) << (8 * i);
    if (len > bytes.size() - 16) throw CheckpointError("checkpoint manifest length exceeds file size");
    json manifest;
    try {
        manifest = json::parse(bytes.begin() + 16, bytes.begin() + 16 + std::ptrdiff_t(len));
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
    }
    Checkpoint ckpt;
    const std::uint8_t* payload = bytes.data() + 16 + len;
    const std::size_t payload_size = bytes.size() - 16 - std::size_t(len);
    try {
        if (manifest.at("format_version").get<int>() != kCheckpointFormatVersion)
            throw CheckpointError("unsupported checkpoint format version");
        if (manifest.at("payload_bytes").get<std::size_t>() != payload_size)
            throw CheckpointError("checkpoint payload size does not match manifest");
        if (manifest.at("payload_crc32").get<std::uint32_t>() != crc_of(payload, payload_size))
            throw CheckpointError("checkpoint payload checksum mismatch");
        ckpt.kind = manifest.at("kind").get<std::string>();
        ckpt.config = config_from_json(manifest.at("model_config"));
        ckpt.state = manifest.at("state");
        std::size_t expected = 0;
        for (const auto& a : manifest.at("arrays")) {
            CheckpointArray arr;
            arr.name = a.at("name").get<std::string>();
            arr.shape = a.at("shape").get<std::vector<int>>();
            if (a.at("dtype").get<std::string>() != "f32") throw CheckpointError("unsupported dtype in " + arr.name);
            if (a.at("offset").get<std::size_t>() != expected)
                throw CheckpointError("checkpoint array " + arr.name + " has a non-contiguous offset");
            const std::size_t n = element_count(arr.shape);
            if (expected + n * sizeof(float) > payload_size)
                throw CheckpointError("checkpoint array " + arr.name + " runs past the payload");
            arr.data.resize(n);
            std::memcpy(arr.data.data(), payload + expected, n * sizeof(float));
            expected += n * sizeof(float);
            ckpt.arrays.push_back(std::move(arr));
        }
        if (expected != payload_size) throw CheckpointError("checkpoint payload has trailing bytes");
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("malformed checkpoint manifest: ") + e.what());
    }
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const auto bytes = serialize_checkpoint(ckpt);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
        if (!out) throw CheckpointError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return deserialize_checkpoint(bytes);
    } catch (const CheckpointError& e) {
        throw CheckpointError(path.string() + ": " + e.what());
    }
}

void append_params(Checkpoint& ckpt, const Params<float>& params, const std::string& prefix) {
    for (const auto& e : params.layout->entries()) {
        CheckpointArray a;
        a.name = prefix + e.name;
        a.shape = e.shape;
        a.data.assign(params.values.begin() + std::ptrdiff_t(e.offset),
                      params.values.begin() + std::ptrdiff_t(e.offset + e.size));
        ckpt.arrays.push_back(std::move(a));
    }
}

Params<float> extract_params(const Checkpoint& ckpt, std::shared_ptr<const ParamLayout> layout,
                             const std::string& prefix) {
    Params<float> p(layout);
    for (const auto& e : layout->entries()) {
        const CheckpointArray& a = ckpt.array(prefix + e.name);
        if (a.shape != e.shape) throw CheckpointError("checkpoint array " + a.name + " has the wrong shape");
        std::copy(a.data.begin(), a.data.end(), p.values.begin() + std::ptrdiff_t(e.offset));
    }
    if (!p.all_finite()) throw CheckpointError("checkpoint contains non-finite parameters");
    return p;
}

}  // namespace t2t
