#include "cdcd/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace cdcd {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'C', 'D', 'C', 'D', 'C', 'K', 'P', 'T'};

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

uint64_t get_u64(const std::string& in, size_t off) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<uint64_t>(static_cast<unsigned char>(in[off + static_cast<size_t>(i)])) << (8 * i);
    return v;
}

}  // namespace

const CheckpointArray& CheckpointData::array(const std::string& name) const {
    for (const CheckpointArray& a : arrays)
        if (a.name == name) return a;
    throw std::runtime_error("checkpoint: missing array '" + name + "'");
}

void write_checkpoint(const std::string& path, const CheckpointData& data) {
    json manifest = json::array();
    uint64_t offset = 0;  // elements from the start of the payload
    for (const CheckpointArray& a : data.arrays) {
        if (a.data.size() != static_cast<size_t>(a.rows) * static_cast<size_t>(a.cols))
            throw std::invalid_argument("checkpoint: array '" + a.name + "' shape mismatch");
        manifest.push_back({{"name", a.name}, {"rows", a.rows}, {"cols", a.cols}, {"offset", offset}});
        offset += a.data.size();
    }

    json rng = json::object();
    for (const auto& [name, state] : data.rng)
        rng[name] = {{"seed", state[0]}, {"stream", state[1]}, {"counter", state[2]}};

    json header;
    header["format_version"] = data.format_version;
    header["config"] = json::parse(data.config_json);
    header["vocab"] = data.vocab;
    header["step"] = data.step;
    header["rng"] = rng;
    header["adam"] = {{"model_steps", data.adam_model_steps}, {"warp_steps", data.adam_warp_steps}};
    header["manifest"] = manifest;
    const std::string header_text = header.dump();

    std::string out;
    out.append(kMagic, sizeof(kMagic));
    put_u64(out, header_text.size());
    out += header_text;
    for (const CheckpointArray& a : data.arrays)
        for (double v : a.data) put_u64(out, std::bit_cast<uint64_t>(v));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("checkpoint: short write to " + path);
}

CheckpointData read_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < 16 || bytes.compare(0, 8, kMagic, 8) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    const uint64_t header_len = get_u64(bytes, 8);
    if (bytes.size() < 16 + header_len) throw std::runtime_error("checkpoint: truncated header");
    const json header = json::parse(bytes.substr(16, header_len));

    CheckpointData data;
    data.format_version = header.at("format_version").get<int>();
    if (data.format_version != kCheckpointFormatVersion)
        throw std::runtime_error("checkpoint: incompatible format version " +
                                 std::to_string(data.format_version) + " (this build reads version " +
                                 std::to_string(kCheckpointFormatVersion) + ")");
    data.config_json = header.at("config").dump();
    data.vocab = header.at("vocab").get<std::vector<std::string>>();
    data.step = header.at("step").get<int64_t>();
    for (auto it = header.at("rng").begin(); it != header.at("rng").end(); ++it) {
        std::array<uint64_t, 3> s{it.value().at("seed").get<uint64_t>(),
                                  it.value().at("stream").get<uint64_t>(),
                                  it.value().at("counter").get<uint64_t>()};
        data.rng.emplace_back(it.key(), s);
    }
    data.adam_model_steps = header.at("adam").at("model_steps").get<int64_t>();
    data.adam_warp_steps = header.at("adam").at("warp_steps").get<int64_t>();

    const size_t payload_start = 16 + header_len;
    for (const json& m : header.at("manifest")) {
        CheckpointArray a;
        a.name = m.at("name").get<std::string>();
        a.rows = m.at("rows").get<int>();
        a.cols = m.at("cols").get<int>();
        const uint64_t offset = m.at("offset").get<uint64_t>();
        const size_t n = static_cast<size_t>(a.rows) * static_cast<size_t>(a.cols);
        const size_t byte_off = payload_start + offset * 8;
        if (bytes.size() < byte_off + n * 8) throw std::runtime_error("checkpoint: truncated payload");
        a.data.resize(n);
        for (size_t i = 0; i < n; ++i)
            a.data[i] = std::bit_cast<double>(get_u64(bytes, byte_off + i * 8));
        data.arrays.push_back(std::move(a));
    }
    return data;
}

}  // namespace cdcd
