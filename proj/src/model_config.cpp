#include "vpt/model.hpp"

namespace vpt {

void ModelConfig::validate() const {
    if (d_h < 4 || d_v < 4 || d_z < 4) throw config_error("ModelConfig: widths too small");
    if (image_size % patch_primary != 0 || image_size % patch_reencode != 0)
        throw config_error("ModelConfig: image_size must divide by both patch sizes");
    if (d_h % lm_heads != 0 || d_v % enc_heads != 0 || d_z % enc_heads != 0)
        throw config_error("ModelConfig: widths must divide by head counts");
    if (lm_layers < 1 || enc_layers < 1) throw config_error("ModelConfig: need at least one layer");
    if (n_ctrl < 1 || n_ctrl > 8) throw config_error("ModelConfig: n_ctrl outside [1, 8]");
    if (k < 2) throw config_error("ModelConfig: k must be >= 2");
    if (base_vocab < 1) throw config_error("ModelConfig: base_vocab must be >= 1");
    if (max_seq_len < 8) throw config_error("ModelConfig: max_seq_len too small");
}

std::string ModelConfig::to_json() const {
    nlohmann::json j;
    j["d_h"] = d_h;
    j["d_v"] = d_v;
    j["d_z"] = d_z;
    j["image_size"] = image_size;
    j["patch_primary"] = patch_primary;
    j["patch_reencode"] = patch_reencode;
    j["lm_layers"] = lm_layers;
    j["lm_heads"] = lm_heads;
    j["enc_layers"] = enc_layers;
    j["enc_heads"] = enc_heads;
    j["ffn_mult"] = ffn_mult;
    j["max_seq_len"] = max_seq_len;
    j["n_ctrl"] = n_ctrl;
    j["reencoder"] = reencoder == ReencoderKind::Shared ? "shared" : "separate";
    j["base_vocab"] = base_vocab;
    j["k"] = k;
    j["seed"] = seed;
    j["vocab"] = nlohmann::json::parse(vocabulary_to_json(extend_vocabulary(base_vocab, k)));
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    ModelConfig c;
    c.d_h = j.at("d_h").get<int>();
    c.d_v = j.at("d_v").get<int>();
    c.d_z = j.at("d_z").get<int>();
    c.image_size = j.at("image_size").get<int>();
    c.patch_primary = j.at("patch_primary").get<int>();
    c.patch_reencode = j.at("patch_reencode").get<int>();
    c.lm_layers = j.at("lm_layers").get<int>();
    c.lm_heads = j.at("lm_heads").get<int>();
    c.enc_layers = j.at("enc_layers").get<int>();
    c.enc_heads = j.at("enc_heads").get<int>();
    c.ffn_mult = j.at("ffn_mult").get<int>();
    c.max_seq_len = j.at("max_seq_len").get<int>();
    c.n_ctrl = j.at("n_ctrl").get<int>();
    c.reencoder = j.at("reencoder").get<std::string>() == "shared" ? ReencoderKind::Shared
                                                                   : ReencoderKind::Separate;
    c.base_vocab = j.at("base_vocab").get<int>();
    c.k = j.at("k").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
    c.validate();
    // stored vocabulary must match what the config reconstructs
    if (j.contains("vocab")) {
        const Vocabulary stored = vocabulary_from_json(j.at("vocab").dump());
        if (!(stored == extend_vocabulary(c.base_vocab, c.k)))
            throw config_error("ModelConfig::from_json: vocabulary mismatch");
    }
    return c;
}

}  // namespace vpt
