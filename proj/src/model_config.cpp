#include "rawnet/model.hpp"

#include <fstream>
#include <sstream>

namespace rawnet {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

size_t parse_size(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const long long n = std::stoll(v, &pos);
        if (pos != v.size() || n <= 0) throw std::invalid_argument(v);
        return static_cast<size_t>(n);
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a positive integer, got '" + v + "'");
    }
}

std::vector<BlockSpec> parse_block_specs(const std::string& v) {
    std::vector<BlockSpec> specs;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        const size_t x = item.find('x');
        if (x == std::string::npos)
            throw ConfigError("block_group_specs: expected <repeat>x<filters>, got '" + item +
                              "'");
        BlockSpec s;
        s.repeat = parse_size("block_group_specs", item.substr(0, x));
        s.filters = parse_size("block_group_specs", item.substr(x + 1));
        specs.push_back(s);
    }
    if (specs.empty()) throw ConfigError("block_group_specs: empty list");
    return specs;
}

} // namespace

void ModelConfig::validate() const {
    if (frontend_filter_len < 3 || frontend_filter_len % 2 == 0)
        throw ConfigError("frontend_filter_len must be an odd integer >= 3");
    if (frontend_filters == 0) throw ConfigError("frontend_filters must be positive");
    if (block_group_specs.empty()) throw ConfigError("block_group_specs must be non-empty");
    for (const BlockSpec& s : block_group_specs)
        if (s.repeat == 0 || s.filters == 0)
            throw ConfigError("block_group_specs entries must be positive");
    if (pool_width == 0) throw ConfigError("pool_width must be positive");
    if (gru_hidden == 0) throw ConfigError("gru_hidden must be positive");
    if (embedding_dim == 0) throw ConfigError("embedding_dim must be positive");
    if (n_speakers < 2) throw ConfigError("n_speakers must be at least 2");
    if (input_len < frontend_filter_len)
        throw ConfigError("input_len must be at least frontend_filter_len");
    if (sample_rate < 300) throw ConfigError("sample_rate too small");

    // input_len must survive 1 + total_blocks pooling stages exactly.
    size_t divisor = 1;
    const size_t stages = 1 + total_blocks();
    for (size_t i = 0; i < stages; ++i) {
        if (divisor > input_len / pool_width + 1) break;
        divisor *= pool_width;
    }
    if (divisor == 0 || input_len % divisor != 0 || input_len / divisor == 0)
        throw ConfigError("input_len " + std::to_string(input_len) +
                          " is not divisible by pool_width^" + std::to_string(stages));
}

std::string ModelConfig::to_text() const {
    std::ostringstream os;
    os << "frontend=" << (frontend == Frontend::sinc_conv ? "sinc_conv" : "plain_conv") << "\n";
    os << "frontend_filter_len=" << frontend_filter_len << "\n";
    os << "frontend_filters=" << frontend_filters << "\n";
    os << "block_group_specs=";
    for (size_t i = 0; i < block_group_specs.size(); ++i) {
        if (i) os << ",";
        os << block_group_specs[i].repeat << "x" << block_group_specs[i].filters;
    }
    os << "\n";
    os << "pool_width=" << pool_width << "\n";
    os << "fms_kind=" << fms_kind_name(fms_kind) << "\n";
    os << "gru_hidden=" << gru_hidden << "\n";
    os << "embedding_dim=" << embedding_dim << "\n";
    os << "n_speakers=" << n_speakers << "\n";
    os << "input_len=" << input_len << "\n";
    os << "sample_rate=" << sample_rate << "\n";
    return os.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
    ModelConfig cfg;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("expected key=value, got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key == "frontend") {
            if (value == "sinc_conv")
                cfg.frontend = Frontend::sinc_conv;
            else if (value == "plain_conv")
                cfg.frontend = Frontend::plain_conv;
            else
                throw ConfigError("frontend must be sinc_conv or plain_conv, got '" + value +
                                  "'");
        } else if (key == "frontend_filter_len") {
            cfg.frontend_filter_len = parse_size(key, value);
        } else if (key == "frontend_filters") {
            cfg.frontend_filters = parse_size(key, value);
        } else if (key == "block_group_specs") {
            cfg.block_group_specs = parse_block_specs(value);
        } else if (key == "pool_width") {
            cfg.pool_width = parse_size(key, value);
        } else if (key == "fms_kind") {
            cfg.fms_kind = parse_fms_kind(value);
        } else if (key == "gru_hidden") {
            cfg.gru_hidden = parse_size(key, value);
        } else if (key == "embedding_dim") {
            cfg.embedding_dim = parse_size(key, value);
        } else if (key == "n_speakers") {
            cfg.n_speakers = parse_size(key, value);
        } else if (key == "input_len") {
            cfg.input_len = parse_size(key, value);
        } else if (key == "sample_rate") {
            cfg.sample_rate = parse_size(key, value);
        } else {
            throw ConfigError("unknown config key '" + key + "'");
        }
    }
    return cfg;
}

ModelConfig ModelConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str());
}

} // namespace rawnet
