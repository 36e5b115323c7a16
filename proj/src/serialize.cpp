#include "pgnn/serialize.hpp"

#include <json.hpp>

namespace pgnn::serialize {

using json = nlohmann::ordered_json;

std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex64(std::uint64_t value) {
    char buffer[17];
    std::snprintf(buffer, sizeof buffer, "%016llx", static_cast<unsigned long long>(value));
    return buffer;
}

namespace {

json provenance_to_json(const Provenance& p) {
    json j;
    j["tool"] = p.tool;
    j["version"] = p.version;
    j["seed"] = p.seed;
    j["config_hash"] = p.config_hash;
    return j;
}

Provenance provenance_from_json(const json& j) {
    Provenance p;
    p.tool = j.value("tool", "pgnn");
    p.version = j.value("version", "");
    p.seed = j.value("seed", std::uint64_t{0});
    p.config_hash = j.value("config_hash", "");
    return p;
}

json spec_to_json(const nn::MlpSpec& spec) {
    json j;
    j["input_dim"] = spec.input_dim;
    j["output_dim"] = spec.output_dim;
    j["hidden"] = spec.hidden;
    j["activation"] = nn::activation_name(spec.hidden_activation);
    return j;
}

nn::MlpSpec spec_from_json(const json& j) {
    nn::MlpSpec spec;
    spec.input_dim = j.at("input_dim").get<int>();
    spec.output_dim = j.at("output_dim").get<int>();
    spec.hidden = j.at("hidden").get<std::vector<int>>();
    spec.hidden_activation = nn::parse_activation(j.at("activation").get<std::string>());
    return spec;
}

// layer-indexed keys w0/b0/w1/b1/...
json params_to_json(const nn::MlpParams& p) {
    json j;
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
        j["w" + std::to_string(l)] = p.weights[l];
        j["b" + std::to_string(l)] = p.biases[l];
    }
    return j;
}

nn::MlpParams params_from_json(const json& j, const nn::MlpSpec& spec) {
    nn::MlpParams p;
    for (int l = 0; l < spec.layer_count(); ++l) {
        p.weights.push_back(j.at("w" + std::to_string(l)).get<std::vector<double>>());
        p.biases.push_back(j.at("b" + std::to_string(l)).get<std::vector<double>>());
    }
    return p;
}

json preles_to_json(const preles::PrelesParams& p) {
    json j;
    const auto flat = preles::flatten(p);
    for (int i = 0; i < preles::kParamCount; ++i) j[preles::kParamNames[i]] = flat[i];
    return j;
}

preles::PrelesParams preles_from_json(const json& j) {
    std::array<double, preles::kParamCount> flat{};
    for (int i = 0; i < preles::kParamCount; ++i)
        flat[i] = j.at(preles::kParamNames[i]).get<double>();
    return preles::unflatten(flat);
}

json stats_to_json(const couple::FeatureStats& s) {
    json j;
    json cov = json::array();
    for (const auto& ns : s.covariates) cov.push_back(json::array({ns.mean, ns.sd}));
    j["covariates"] = std::move(cov);
    json pm = json::array();
    for (const auto& ns : s.pm_outputs) pm.push_back(json::array({ns.mean, ns.sd}));
    j["pm_outputs"] = std::move(pm);
    return j;
}

couple::FeatureStats stats_from_json(const json& j) {
    couple::FeatureStats s;
    const auto& cov = j.at("covariates");
    for (int i = 0; i < 5; ++i)
        s.covariates[i] = {cov.at(i).at(0).get<double>(), cov.at(i).at(1).get<double>()};
    const auto& pm = j.at("pm_outputs");
    for (int i = 0; i < 3; ++i)
        s.pm_outputs[i] = {pm.at(i).at(0).get<double>(), pm.at(i).at(1).get<double>()};
    return s;
}

json prior_to_json_obj(const data::ParameterPrior& prior) {
    json j;
    for (int i = 0; i < preles::kParamCount; ++i)
        j[preles::kParamNames[i]] = json::array({prior.lo[i], prior.hi[i]});
    return j;
}

data::ParameterPrior prior_from_json_obj(const json& j) {
    data::ParameterPrior prior;
    for (int i = 0; i < preles::kParamCount; ++i) {
        prior.lo[i] = j.at(preles::kParamNames[i]).at(0).get<double>();
        prior.hi[i] = j.at(preles::kParamNames[i]).at(1).get<double>();
    }
    return prior;
}

}  // namespace

std::string bundle_to_json(const couple::CoupledModel& model, const Provenance& provenance,
                           std::uint64_t train_fingerprint) {
    json j;
    j["version"] = kBundleVersion;
    j["provenance"] = provenance_to_json(provenance);
    j["kind"] = couple::kind_name(model.kind);
    j["train_data_fingerprint"] = hex64(train_fingerprint);
    j["pm_params"] = preles_to_json(model.pm_params);
    j["stats"] = stats_to_json(model.stats);
    if (couple::uses_network(model.kind)) {
        j["nn_spec"] = spec_to_json(model.nn_spec);
        j["nn_params"] = params_to_json(model.nn_params);
    }
    if (couple::uses_lambda(model.kind)) j["lambda"] = model.lambda;
    if (model.kind == couple::CouplingKind::PhysicsEmbedding) {
        j["param_net_spec"] = spec_to_json(model.param_net_spec);
        j["param_net_params"] = params_to_json(model.param_net_params);
        j["embed_prior"] = prior_to_json_obj(model.embed_prior);
    }
    if (model.kind == couple::CouplingKind::DomainAdaptation)
        j["frozen_layers"] = model.frozen_layers;
    return j.dump(2) + "\n";
}

LoadedBundle bundle_from_json(const std::string& text) {
    const json j = json::parse(text);
    if (!j.contains("version")) throw std::invalid_argument("model bundle: missing version field");
    if (j.at("version").get<int>() != kBundleVersion)
        throw std::invalid_argument("model bundle: unsupported version");

    LoadedBundle out;
    out.provenance = provenance_from_json(j.value("provenance", json::object()));
    out.train_fingerprint =
        std::stoull(j.value("train_data_fingerprint", std::string("0")), nullptr, 16);

    couple::CoupledModel& m = out.model;
    m.kind = couple::parse_kind(j.at("kind").get<std::string>());
    m.pm_params = preles_from_json(j.at("pm_params"));
    m.stats = stats_from_json(j.at("stats"));
    if (couple::uses_network(m.kind)) {
        m.nn_spec = spec_from_json(j.at("nn_spec"));
        m.nn_params = params_from_json(j.at("nn_params"), m.nn_spec);
    }
    if (couple::uses_lambda(m.kind)) m.lambda = j.at("lambda").get<double>();
    if (m.kind == couple::CouplingKind::PhysicsEmbedding) {
        m.param_net_spec = spec_from_json(j.at("param_net_spec"));
        m.param_net_params = params_from_json(j.at("param_net_params"), m.param_net_spec);
        m.embed_prior = prior_from_json_obj(j.at("embed_prior"));
    }
    if (m.kind == couple::CouplingKind::DomainAdaptation)
        m.frozen_layers = j.value("frozen_layers", 0);
    couple::validate(m);
    return out;
}

}  // namespace pgnn::serialize
