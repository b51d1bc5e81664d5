#include "balancedit/backbone/checkpoint.hpp"

#include "balancedit/common/binary_io.hpp"
#include "balancedit/common/error.hpp"
#include "json.hpp"

namespace balancedit::backbone {

using nlohmann::json;

std::vector<std::uint8_t> serialize_checkpoint(const BackboneModel& model) {
    std::vector<std::uint8_t> blob;
    json params = json::array();
    for (const auto& p : model.parameters()) {
        params.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"offset", blob.size()}});
        append_f64_le(blob, p.value.data());
    }
    const json header = {{"format", "balancedit-checkpoint"},
                         {"format_version", kCheckpointFormatVersion},
                         {"config", model.config()},
                         {"seed", model.config().seed},
                         {"parameters", params},
                         {"blob_bytes", blob.size()}};
    const std::string text = header.dump() + "\n";
    std::vector<std::uint8_t> out(text.begin(), text.end());
    out.insert(out.end(), blob.begin(), blob.end());
    return out;
}

BackboneModel deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
    const auto [header_text, blob] = split_header(bytes, "checkpoint");
    json header;
    try {
        header = json::parse(header_text);
    } catch (const json::exception& e) {
        fail(ErrorKind::format, std::string("checkpoint header: ") + e.what());
    }
    try {
        if (header.at("format") != "balancedit-checkpoint") {
            fail(ErrorKind::format, "not a checkpoint file");
        }
        const int version = header.at("format_version").get<int>();
        if (version != kCheckpointFormatVersion) {
            fail(ErrorKind::format, "checkpoint format_version " + std::to_string(version) + ", expected " +
                                        std::to_string(kCheckpointFormatVersion));
        }
        if (header.at("blob_bytes").get<std::size_t>() != blob.size()) {
            fail(ErrorKind::format, "checkpoint blob is " + std::to_string(blob.size()) + " bytes, header says " +
                                        std::to_string(header.at("blob_bytes").get<std::size_t>()));
        }
        BackboneModel model(header.at("config").get<ModelConfig>());
        const json& records = header.at("parameters");
        if (records.size() != model.parameters().size()) {
            fail(ErrorKind::format, "checkpoint parameter count does not match its config");
        }
        for (std::size_t i = 0; i < records.size(); ++i) {
            auto& p = model.parameters()[i];
            const json& rec = records[i];
            if (rec.at("name") != p.name || rec.at("shape").get<numerics::Shape>() != p.value.shape()) {
                fail(ErrorKind::format, "checkpoint parameter " + std::to_string(i) + " does not match its config");
            }
            auto values = read_f64_le(blob, rec.at("offset").get<std::size_t>(), p.value.size());
            p.value = numerics::Tensor(p.value.shape(), std::move(values));
        }
        return model;
    } catch (const json::exception& e) {
        fail(ErrorKind::format, std::string("checkpoint header: ") + e.what());
    }
}

void save_checkpoint(const BackboneModel& model, const std::string& path) {
    write_file_bytes(path, serialize_checkpoint(model));
}

BackboneModel load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file_bytes(path)); }

}  // namespace balancedit::backbone
