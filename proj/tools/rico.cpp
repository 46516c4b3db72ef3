// Command-line front end: corpus generation, training, indexing, retrieval
// experiments and metric evaluation.  Every subcommand reads a JSON config
// file; --set key=value overrides individual entries.

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "rico/rico.hpp"

namespace fs = std::filesystem;
using rico::Json;

namespace {

struct usage_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

Json load_config(const std::string& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw usage_error("config file not found: " + path);
    Json cfg;
    try {
        in >> cfg;
    } catch (const Json::parse_error& e) {
        throw usage_error("config file " + path + " is not valid JSON: " + e.what());
    }
    for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw usage_error("--set expects key=value, got '" + kv + "'");
        const std::string key = kv.substr(0, eq);
        const std::string value = kv.substr(eq + 1);
        try {
            cfg[key] = Json::parse(value); // numbers, booleans, arrays, quoted strings
        } catch (const Json::parse_error&) {
            cfg[key] = value; // plain string
        }
    }
    return cfg;
}

rico::OptimizerConfig optimizer_from(const Json& cfg) {
    rico::OptimizerConfig opt;
    opt.steps = cfg.value("steps", 10);
    opt.learning_rate = cfg.value("learning_rate", 0.1);
    opt.beta1 = cfg.value("beta1", 0.9);
    opt.beta2 = cfg.value("beta2", 0.999);
    opt.epsilon = cfg.value("epsilon", 1e-8);
    opt.weight_decay = cfg.value("weight_decay", 0.0);
    const std::string objective = cfg.value("objective", std::string("question-loss"));
    if (objective == "question-loss")
        opt.objective = rico::OptimizeObjective::question_loss;
    else if (objective == "oracle-loss")
        opt.objective = rico::OptimizeObjective::oracle_loss;
    else
        throw usage_error("objective must be question-loss or oracle-loss");
    return opt;
}

rico::StateIndex load_index_for(const Json& cfg, const rico::ModelParams& params) {
    if (!cfg.contains("index")) throw usage_error("config needs an 'index' path");
    return rico::load_index(cfg.at("index").get<std::string>(), &params);
}

int cmd_gen_corpus(const Json& cfg) {
    rico::CorpusSpec spec = rico::CorpusSpec::from_json(cfg);
    if (!cfg.contains("out_dir")) throw usage_error("gen-corpus config needs out_dir");
    const auto out_dir = cfg.at("out_dir").get<std::string>();
    const rico::Corpus corpus = rico::gen_corpus(spec);
    rico::save_corpus(corpus, out_dir);
    std::printf("wrote corpus to %s: %zu docs, %zu queries, vocab %d\n", out_dir.c_str(),
                corpus.docs.size(), corpus.queries.size(), corpus.vocab.size());
    return 0;
}

int cmd_train(const Json& cfg) {
    if (!cfg.contains("corpus_dir") || !cfg.contains("checkpoint_out"))
        throw usage_error("train config needs corpus_dir and checkpoint_out");
    const rico::Corpus corpus = rico::load_corpus(cfg.at("corpus_dir").get<std::string>());
    rico::TrainConfig tc;
    tc.embed_dim = cfg.value("embed_dim", tc.embed_dim);
    tc.state_dim = cfg.value("state_dim", tc.state_dim);
    tc.num_layers = cfg.value("num_layers", tc.num_layers);
    tc.init_seed = cfg.value("init_seed", tc.init_seed);
    tc.epochs = cfg.value("epochs", tc.epochs);
    tc.learning_rate = cfg.value("learning_rate", tc.learning_rate);
    tc.beta1 = cfg.value("beta1", tc.beta1);
    tc.beta2 = cfg.value("beta2", tc.beta2);
    tc.epsilon = cfg.value("epsilon", tc.epsilon);
    tc.weight_decay = cfg.value("weight_decay", tc.weight_decay);
    tc.two_doc_items = cfg.value("two_doc_items", tc.two_doc_items);
    tc.shuffle_seed = cfg.value("shuffle_seed", tc.shuffle_seed);

    auto [params, report] = rico::train_lm(tc, corpus);
    rico::save_checkpoint(params, cfg.at("checkpoint_out").get<std::string>());
    if (cfg.contains("curve_csv")) {
        std::ofstream out(cfg.at("curve_csv").get<std::string>(), std::ios::trunc);
        out << "epoch,nats_per_token\n";
        for (size_t e = 0; e < report.epoch_loss.size(); ++e)
            out << e + 1 << ',' << report.epoch_loss[e] << '\n';
    }
    std::printf("trained %zu items for %d epochs; final loss %.4f nats/token\n", report.items,
                tc.epochs, report.final_loss);
    return 0;
}

int cmd_index(const Json& cfg) {
    if (!cfg.contains("corpus_dir") || !cfg.contains("checkpoint") || !cfg.contains("index_out"))
        throw usage_error("index config needs corpus_dir, checkpoint and index_out");
    const rico::Corpus corpus = rico::load_corpus(cfg.at("corpus_dir").get<std::string>());
    const rico::ModelParams params =
        rico::load_checkpoint(cfg.at("checkpoint").get<std::string>());

    std::vector<rico::DocumentRecord> docs;
    for (const auto& d : corpus.docs)
        docs.push_back({d.doc_id, corpus.vocab.tokenize(d.text), d.text});
    rico::StateIndex index = rico::precompute_states(params, docs);

    if (cfg.contains("keep_layers")) {
        const auto keep = cfg.at("keep_layers").get<std::vector<uint32_t>>();
        index = rico::layer_subsample(index, {keep.begin(), keep.end()});
    } else if (cfg.value("keep_middle_layers", 0) > 0) {
        index = rico::layer_subsample(
            index, rico::middle_layers(index.full_layers,
                                       uint32_t(cfg.at("keep_middle_layers").get<int>())));
    }
    rico::save_index(index, cfg.at("index_out").get<std::string>());
    std::printf("indexed %zu documents (%zu retained layers)\n", index.size(),
                index.retained_layers().size());
    return 0;
}

int run_experiment(const Json& cfg, rico::CandidateScope default_scope) {
    if (!cfg.contains("corpus_dir") || !cfg.contains("checkpoint"))
        throw usage_error("config needs corpus_dir and checkpoint");
    const rico::Corpus corpus = rico::load_corpus(cfg.at("corpus_dir").get<std::string>());
    const rico::ModelParams params =
        rico::load_checkpoint(cfg.at("checkpoint").get<std::string>());
    const rico::StateIndex index = load_index_for(cfg, params);

    rico::ExperimentConfig ec;
    ec.method = rico::parse_method(cfg.value("method", std::string("multistep")));
    ec.k = cfg.value("k", 10);
    ec.opt = optimizer_from(cfg);
    ec.scope = default_scope;
    if (cfg.contains("scope")) {
        const std::string scope = cfg.at("scope").get<std::string>();
        if (scope == "judged")
            ec.scope = rico::CandidateScope::judged;
        else if (scope == "all")
            ec.scope = rico::CandidateScope::all_facts;
        else
            throw usage_error("scope must be judged or all");
    }
    if (cfg.contains("families"))
        ec.families = cfg.at("families").get<std::vector<std::string>>();
    ec.include_held_out = cfg.value("include_held_out", true);
    ec.seed = cfg.value("seed", 1);

    const rico::RerankResult result = rico::run_rerank_experiment(params, index, corpus, ec);
    if (cfg.contains("out_rankings"))
        rico::write_rankings_jsonl(cfg.at("out_rankings").get<std::string>(), result);
    if (cfg.contains("out_metrics"))
        rico::write_metrics_csv(cfg.at("out_metrics").get<std::string>(), result.metrics);
    if (cfg.contains("out_calls"))
        rico::write_calls_csv(cfg.at("out_calls").get<std::string>(), result);
    std::printf("%s over %zu queries: ndcg@%zu %.4f map %.4f (%llu fwd / %llu bwd passes)\n",
                rico::method_name(ec.method), result.per_query.size(), ec.k,
                result.metrics.mean_ndcg, result.metrics.mean_map,
                (unsigned long long)result.total_forward,
                (unsigned long long)result.total_backward);
    return 0;
}

int cmd_eval(const Json& cfg) {
    if (!cfg.contains("rankings") || !cfg.contains("judgments"))
        throw usage_error("eval config needs rankings and judgments");
    std::map<std::string, rico::RankedList> rankings;
    for (const auto& row : rico::read_jsonl(cfg.at("rankings").get<std::string>())) {
        rico::RankedList list;
        for (const auto& pair : row.at("ranking"))
            list.push_back({pair.at(0).get<std::string>(), pair.at(1).get<double>()});
        rankings[row.at("query_id").get<std::string>()] = std::move(list);
    }
    rico::RelevanceJudgments judgments;
    for (const auto& row : rico::read_jsonl(cfg.at("judgments").get<std::string>()))
        judgments[row.at("query_id").get<std::string>()][row.at("doc_id").get<std::string>()] =
            row.at("grade").get<int>();

    const size_t k = cfg.value("k", 10);
    const rico::MetricReport report = rico::evaluate_rankings(rankings, judgments, k);
    if (cfg.contains("out_metrics"))
        rico::write_metrics_csv(cfg.at("out_metrics").get<std::string>(), report);
    std::printf("evaluated %zu queries at k=%zu: precision %.4f recall %.4f ndcg %.4f map %.4f "
                "(%zu skipped without relevant docs)\n",
                report.per_query.size(), k, report.mean_precision, report.mean_recall,
                report.mean_ndcg, report.mean_map, report.skipped_no_relevant);
    return 0;
}

int cmd_landscape(const Json& cfg) {
    if (!cfg.contains("corpus_dir") || !cfg.contains("checkpoint") || !cfg.contains("query_id") ||
        !cfg.contains("doc_a") || !cfg.contains("doc_b"))
        throw usage_error("landscape config needs corpus_dir, checkpoint, query_id, doc_a, doc_b");
    const rico::Corpus corpus = rico::load_corpus(cfg.at("corpus_dir").get<std::string>());
    const rico::ModelParams params =
        rico::load_checkpoint(cfg.at("checkpoint").get<std::string>());
    const rico::StateIndex index = load_index_for(cfg, params);

    const auto result = rico::run_landscape(
        params, index, corpus, cfg.at("query_id").get<std::string>(),
        cfg.at("doc_a").get<std::string>(), cfg.at("doc_b").get<std::string>(),
        cfg.value("resolution", 21), optimizer_from(cfg));
    if (cfg.contains("out_grid"))
        rico::write_landscape_csv(cfg.at("out_grid").get<std::string>(), result);
    if (cfg.contains("out_trace"))
        rico::write_trace_jsonl(cfg.at("out_trace").get<std::string>(), result.trace);
    std::printf("landscape %zux%zu evaluated with %llu forward passes\n", result.resolution,
                result.resolution, (unsigned long long)result.grid_forward_passes);
    return 0;
}

int cmd_ordering(const Json& cfg) {
    if (!cfg.contains("corpus_dir") || !cfg.contains("checkpoint"))
        throw usage_error("ordering config needs corpus_dir and checkpoint");
    const rico::Corpus corpus = rico::load_corpus(cfg.at("corpus_dir").get<std::string>());
    const rico::ModelParams params =
        rico::load_checkpoint(cfg.at("checkpoint").get<std::string>());
    const auto result = rico::run_ordering_experiment(params, corpus);
    if (cfg.contains("out_csv"))
        rico::write_ordering_csv(cfg.at("out_csv").get<std::string>(), result);
    std::printf("ordering over %zu queries: mean delta most-relevant-last %.4f, "
                "most-relevant-first %.4f\n",
                result.rows.size(), result.mean_last, result.mean_first);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"gradient-guided document retrieval for state space language models"};
    app.require_subcommand(1);

    struct Sub {
        CLI::App* cmd = nullptr;
        std::string config;
        std::vector<std::string> overrides;
    };
    auto add_sub = [&](const char* name, const char* desc) {
        auto sub = std::make_shared<Sub>();
        sub->cmd = app.add_subcommand(name, desc);
        sub->cmd->add_option("-c,--config", sub->config, "JSON config file")->required();
        sub->cmd->add_option("--set", sub->overrides, "override a config entry (key=value)");
        return sub;
    };

    auto gen = add_sub("gen-corpus", "generate a synthetic fact corpus");
    auto train = add_sub("train", "train the toy language model");
    auto index = add_sub("index", "precompute and store document states");
    auto retrieve = add_sub("retrieve", "score the full document store for each query");
    auto rerank = add_sub("rerank", "rerank each query's judged candidate set");
    auto eval = add_sub("eval", "compute retrieval metrics from rankings + judgments");
    auto landscape = add_sub("landscape", "loss landscape over a two-document mixture");
    auto ordering = add_sub("ordering", "document-order effect on answer loss");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2; // usage problems exit 2, --help exits 0
    }

    try {
        if (gen->cmd->parsed()) return cmd_gen_corpus(load_config(gen->config, gen->overrides));
        if (train->cmd->parsed()) return cmd_train(load_config(train->config, train->overrides));
        if (index->cmd->parsed()) return cmd_index(load_config(index->config, index->overrides));
        if (retrieve->cmd->parsed())
            return run_experiment(load_config(retrieve->config, retrieve->overrides),
                                  rico::CandidateScope::all_facts);
        if (rerank->cmd->parsed())
            return run_experiment(load_config(rerank->config, rerank->overrides),
                                  rico::CandidateScope::judged);
        if (eval->cmd->parsed()) return cmd_eval(load_config(eval->config, eval->overrides));
        if (landscape->cmd->parsed())
            return cmd_landscape(load_config(landscape->config, landscape->overrides));
        if (ordering->cmd->parsed())
            return cmd_ordering(load_config(ordering->config, ordering->overrides));
    } catch (const usage_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
