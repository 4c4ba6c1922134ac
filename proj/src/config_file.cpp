#include "facelivt/config_file.hpp"

#include <fstream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace facelivt {

namespace pt = boost::property_tree;

ModelConfig parse_config(std::istream& in) {
    pt::ptree tree;
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw std::invalid_argument(std::string("config: ") + e.what());
    }

    ModelConfig config;
    try {
        config.variant = tree.get<std::string>("model.variant", config.variant);
        config.heads = tree.get<std::size_t>("model.heads", config.heads);
        config.mhla_expansion = tree.get<std::size_t>("model.mhla_expansion", config.mhla_expansion);
        config.mlp_expansion = tree.get<std::size_t>("model.mlp_expansion", config.mlp_expansion);
        config.embed_dim = tree.get<std::size_t>("model.embed_dim", config.embed_dim);
        config.kernel_size = tree.get<std::size_t>("model.kernel_size", config.kernel_size);
        config.input_size = tree.get<std::size_t>("model.input_size", config.input_size);
        for (std::size_t s = 0; s < kStageCount; ++s) {
            const std::string section = "stage" + std::to_string(s + 1) + ".";
            config.stage_dims[s] = tree.get<std::size_t>(section + "dim");
            config.stage_blocks[s] = tree.get<std::size_t>(section + "blocks");
            config.stage_mixers[s] = parse_mixer_kind(tree.get<std::string>(section + "mixer"));
            config.stage_resolutions[s] = tree.get<std::size_t>(section + "resolution");
        }
        config.stem_dim = tree.get<std::size_t>("model.stem_dim", config.stage_dims[0]);
    } catch (const pt::ptree_error& e) {
        throw std::invalid_argument(std::string("config: ") + e.what());
    }
    config.validate();
    return config;
}

ModelConfig load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path.string());
    return parse_config(in);
}

std::string format_config(const ModelConfig& config) {
    std::ostringstream os;
    os << "[model]\n"
       << "variant = " << config.variant << '\n'
       << "stem_dim = " << config.stem_dim << '\n'
       << "heads = " << config.heads << '\n'
       << "mhla_expansion = " << config.mhla_expansion << '\n'
       << "mlp_expansion = " << config.mlp_expansion << '\n'
       << "embed_dim = " << config.embed_dim << '\n'
       << "kernel_size = " << config.kernel_size << '\n'
       << "input_size = " << config.input_size << '\n';
    for (std::size_t s = 0; s < kStageCount; ++s) {
        os << "\n[stage" << s + 1 << "]\n"
           << "dim = " << config.stage_dims[s] << '\n'
           << "blocks = " << config.stage_blocks[s] << '\n'
           << "mixer = " << to_string(config.stage_mixers[s]) << '\n'
           << "resolution = " << config.stage_resolutions[s] << '\n';
    }
    return os.str();
}

}  // namespace facelivt
