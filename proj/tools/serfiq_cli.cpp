// serfiq command line: synthesize embedding corpora, train the on-top
// model, score qualities, build pair protocols, and export evaluation data.
//
// Exit codes: 0 success, 1 data/IO error, 2 usage error.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "serfiq/serfiq.hpp"

namespace {

serfiq::EmbeddingFormat parse_format(const std::string& name) {
    if (name == "csv") return serfiq::EmbeddingFormat::csv;
    if (name == "emb1") return serfiq::EmbeddingFormat::emb1;
    throw CLI::ValidationError("--format", "must be csv or emb1");
}

// Reads the first bytes to tell emb1 from CSV when no format is forced.
serfiq::EmbeddingDataset load_any(const std::string& path, const std::string& format) {
    if (format == "csv") return serfiq::load_embeddings(path, serfiq::EmbeddingFormat::csv);
    if (format == "emb1") return serfiq::load_embeddings(path, serfiq::EmbeddingFormat::emb1);
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw std::runtime_error("cannot open " + path);
    char magic[4] = {};
    probe.read(magic, 4);
    const bool is_emb1 = probe.gcount() == 4 && std::string_view(magic, 4) == "EMB1";
    return serfiq::load_embeddings(path, is_emb1 ? serfiq::EmbeddingFormat::emb1
                                                 : serfiq::EmbeddingFormat::csv);
}

std::vector<double> parse_ratio_grid(const std::string& text) {
    std::vector<double> ratios;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t pos = text.find(',', start);
        const std::string field = pos == std::string::npos
                                      ? text.substr(start)
                                      : text.substr(start, pos - start);
        if (!field.empty()) {
            try {
                ratios.push_back(std::stod(field));
            } catch (const std::exception&) {
                throw CLI::ValidationError("--ratios", "cannot parse '" + field + "'");
            }
        }
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    if (ratios.empty()) throw CLI::ValidationError("--ratios", "empty ratio grid");
    for (std::size_t i = 0; i < ratios.size(); ++i) {
        if (ratios[i] < 0.0 || ratios[i] >= 1.0)
            throw CLI::ValidationError("--ratios", "ratios must lie in [0,1)");
        if (i > 0 && ratios[i] <= ratios[i - 1])
            throw CLI::ValidationError("--ratios", "ratios must be strictly increasing");
    }
    return ratios;
}

std::vector<double> default_ratio_grid() {
    std::vector<double> ratios;
    for (int i = 0; i <= 18; ++i) ratios.push_back(0.05 * i);  // 0, 0.05, ..., 0.9
    return ratios;
}

void write_history(const std::string& path, const std::vector<double>& losses) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "epoch,mean_loss\n";
    for (std::size_t e = 0; e < losses.size(); ++e)
        out << (e + 1) << ',' << serfiq::detail::format_double(losses[e]) << "\n";
    if (!out) throw std::runtime_error("write failed: " + path);
}

int run(int argc, char** argv) {
    CLI::App app{"Stochastic-embedding-robustness quality estimation toolkit"};
    app.require_subcommand(1);

    // ---- synth-gen ----
    auto* synth_cmd = app.add_subcommand(
        "synth-gen", "Generate a synthetic identity-cluster embedding corpus");
    serfiq::SynthSpec synth_spec;
    std::string synth_out, synth_out_quality, synth_format = "emb1";
    synth_cmd->add_option("--identities", synth_spec.n_identities, "Number of identities")
        ->capture_default_str();
    synth_cmd->add_option("--images-per-identity", synth_spec.images_per_identity,
                          "Images per identity")
        ->capture_default_str();
    synth_cmd->add_option("--dim", synth_spec.dim, "Embedding dimension")
        ->capture_default_str();
    synth_cmd->add_option("--noise-low", synth_spec.noise_low, "Lower noise sigma")
        ->capture_default_str();
    synth_cmd->add_option("--noise-high", synth_spec.noise_high, "Upper noise sigma")
        ->capture_default_str();
    synth_cmd->add_option("--proto-seed", synth_spec.prototype_seed, "Prototype seed")
        ->capture_default_str();
    synth_cmd->add_option("--noise-seed", synth_spec.noise_seed, "Noise seed")
        ->capture_default_str();
    synth_cmd->add_option("--out", synth_out, "Output embeddings file")->required();
    synth_cmd->add_option("--out-quality", synth_out_quality,
                          "Ground-truth quality CSV (-sigma per image)");
    synth_cmd->add_option("--format", synth_format, "Output format: csv|emb1")
        ->capture_default_str();

    // ---- train ----
    auto* train_cmd =
        app.add_subcommand("train", "Train the dropout classification net");
    std::string train_input, train_model_out, train_history_out, train_dims;
    std::string train_loss = "bce", train_format = "auto";
    serfiq::TrainConfig train_cfg;
    double train_dropout = 0.5;
    std::uint64_t train_seed = 0;
    train_cmd->add_option("--input", train_input, "Embeddings file")->required();
    train_cmd->add_option("--model-out", train_model_out, "Model file")->required();
    train_cmd->add_option("--history-out", train_history_out, "Per-epoch loss CSV");
    train_cmd->add_option("--dims", train_dims,
                          "Comma-separated layer dims incl. input/output "
                          "(default: D,128,512,D,n_ids)");
    train_cmd->add_option("--epochs", train_cfg.epochs, "Training epochs")
        ->capture_default_str();
    train_cmd->add_option("--batch-size", train_cfg.batch_size, "Mini-batch size")
        ->capture_default_str();
    train_cmd->add_option("--lr", train_cfg.lr, "Update scale")->capture_default_str();
    train_cmd->add_option("--rho", train_cfg.rho, "AdaDelta decay")->capture_default_str();
    train_cmd->add_option("--eps", train_cfg.eps, "AdaDelta epsilon")
        ->capture_default_str();
    train_cmd->add_option("--dropout", train_dropout, "Dropout probability")
        ->capture_default_str();
    train_cmd->add_option("--loss", train_loss, "Loss: bce|softmax-ce")
        ->capture_default_str();
    train_cmd->add_option("--seed", train_seed, "Master seed")->capture_default_str();
    train_cmd->add_option("--format", train_format, "Input format: auto|csv|emb1")
        ->capture_default_str();

    // ---- score ----
    auto* score_cmd = app.add_subcommand("score", "Score per-image quality");
    std::string score_model, score_input, score_out, score_mode = "on-top";
    std::string score_format = "auto";
    serfiq::SerConfig score_cfg;
    unsigned score_threads = 1;
    score_cmd->add_option("--model", score_model, "Model file")->required();
    score_cmd->add_option("--input", score_input, "Embeddings file")->required();
    score_cmd->add_option("--out", score_out, "Quality CSV")->required();
    score_cmd->add_option("--m", score_cfg.m, "Stochastic passes per image")
        ->capture_default_str();
    score_cmd->add_option("--mode", score_mode, "on-top|same-model")
        ->capture_default_str();
    score_cmd->add_option("--seed", score_cfg.master_seed, "Master seed")
        ->capture_default_str();
    score_cmd->add_flag("--normalize", score_cfg.normalize_embeddings,
                        "L2-normalize stochastic embeddings (experimental)");
    score_cmd->add_option("--threads", score_threads, "Worker threads")
        ->capture_default_str();
    score_cmd->add_option("--format", score_format, "Input format: auto|csv|emb1")
        ->capture_default_str();

    // ---- pairs ----
    auto* pairs_cmd =
        app.add_subcommand("pairs", "Generate a genuine/impostor pair protocol");
    std::string pairs_input, pairs_out, pairs_format = "auto";
    std::size_t pairs_impostor_count = 10000;
    std::uint64_t pairs_seed = 0;
    pairs_cmd->add_option("--input", pairs_input, "Embeddings file")->required();
    pairs_cmd->add_option("--out", pairs_out, "Pairs CSV")->required();
    pairs_cmd->add_option("--impostor-count", pairs_impostor_count,
                          "Impostor pairs to sample")
        ->capture_default_str();
    pairs_cmd->add_option("--seed", pairs_seed, "Sampling seed")->capture_default_str();
    pairs_cmd->add_option("--format", pairs_format, "Input format: auto|csv|emb1")
        ->capture_default_str();

    // ---- evaluate ----
    auto* eval_cmd = app.add_subcommand(
        "evaluate", "Error-versus-reject curves for one or more quality tables");
    std::string eval_input, eval_pairs, eval_op = "fnmr-at-fmr", eval_out_dir = ".";
    std::string eval_ratios_text, eval_format = "auto";
    std::vector<std::string> eval_qualities;
    double eval_fmr = 0.01;
    std::size_t eval_impostor_count = 10000;
    std::uint64_t eval_pairs_seed = 0;
    bool eval_have_pairs_seed = false;
    eval_cmd->add_option("--input", eval_input, "Embeddings file")->required();
    eval_cmd->add_option("--pairs", eval_pairs, "Pairs CSV (else generated)");
    eval_cmd->add_option("--pairs-seed", eval_pairs_seed, "Pair-generation seed")
        ->each([&](const std::string&) { eval_have_pairs_seed = true; });
    eval_cmd->add_option("--impostor-count", eval_impostor_count,
                         "Impostor pairs when generating")
        ->capture_default_str();
    eval_cmd->add_option("--quality", eval_qualities, "Quality CSV (repeatable)")
        ->required();
    eval_cmd->add_option("--op", eval_op, "Operating point: eer|fnmr-at-fmr")
        ->capture_default_str();
    eval_cmd->add_option("--fmr", eval_fmr, "Target FMR for fnmr-at-fmr")
        ->capture_default_str();
    eval_cmd->add_option("--ratios", eval_ratios_text,
                         "Comma-separated rejection ratios (default 0..0.9 step 0.05)");
    eval_cmd->add_option("--out-dir", eval_out_dir, "Directory for curve CSVs")
        ->capture_default_str();
    eval_cmd->add_option("--format", eval_format, "Input format: auto|csv|emb1")
        ->capture_default_str();

    // ---- histogram ----
    auto* hist_cmd =
        app.add_subcommand("histogram", "Fixed [0,1] histogram of a quality table");
    std::string hist_quality, hist_out;
    std::size_t hist_bins = 20;
    hist_cmd->add_option("--quality", hist_quality, "Quality CSV")->required();
    hist_cmd->add_option("--out", hist_out, "Histogram CSV")->required();
    hist_cmd->add_option("--bins", hist_bins, "Bin count")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        if (synth_cmd->parsed()) {
            const serfiq::EmbeddingFormat fmt = parse_format(synth_format);
            try {
                synth_spec.validate();
            } catch (const std::runtime_error& e) {
                std::cerr << e.what() << "\n";
                return 2;
            }
            const serfiq::SynthResult result = serfiq::generate(synth_spec);
            serfiq::save_embeddings(result.dataset, synth_out, fmt);
            if (!synth_out_quality.empty())
                serfiq::save_quality_table(result.ground_truth, synth_out_quality);
        } else if (train_cmd->parsed()) {
            if (train_dropout < 0.0 || train_dropout >= 1.0) {
                std::cerr << "--dropout must be in [0,1)\n";
                return 2;
            }
            if (train_loss != "bce" && train_loss != "softmax-ce") {
                std::cerr << "--loss must be bce or softmax-ce\n";
                return 2;
            }
            const serfiq::EmbeddingDataset ds = load_any(train_input, train_format);

            serfiq::NetSpec spec;
            if (train_dims.empty()) {
                spec.layer_dims = {ds.dim(), 128, 512, ds.dim(), ds.identity_count()};
            } else {
                for (const auto& field : [&] {
                         std::vector<std::string> fields;
                         serfiq::detail::split_csv_line(train_dims, fields);
                         return fields;
                     }()) {
                    spec.layer_dims.push_back(
                        static_cast<std::size_t>(std::stoull(field)));
                }
            }
            spec.dropout_prob = train_dropout;
            spec.output_activation = train_loss == "bce"
                                         ? serfiq::OutputActivation::sigmoid
                                         : serfiq::OutputActivation::softmax;
            spec.init_seed = serfiq::derive_seed(train_seed, 0x6E6574 /* "net" */);
            train_cfg.shuffle_seed = serfiq::derive_seed(train_seed, 0x747261 /* "tra" */);
            train_cfg.loss = train_loss == "bce" ? serfiq::LossKind::bce
                                                 : serfiq::LossKind::softmax_ce;

            serfiq::DenseNet net = serfiq::init_net(spec);
            const serfiq::TrainResult result = serfiq::train(net, ds, train_cfg);
            serfiq::save_model(net, train_model_out);
            if (!train_history_out.empty())
                write_history(train_history_out, result.epoch_mean_loss);
        } else if (score_cmd->parsed()) {
            if (score_mode != "on-top" && score_mode != "same-model") {
                std::cerr << "--mode must be on-top or same-model\n";
                return 2;
            }
            score_cfg.mode = score_mode == "on-top" ? serfiq::SerMode::on_top
                                                    : serfiq::SerMode::same_model;
            const serfiq::DenseNet net = serfiq::load_model(score_model);
            const serfiq::EmbeddingDataset ds = load_any(score_input, score_format);
            const serfiq::QualityTable table =
                serfiq::score_dataset(ds, net, score_cfg, score_threads);
            serfiq::save_quality_table(table, score_out);
        } else if (pairs_cmd->parsed()) {
            const serfiq::EmbeddingDataset ds = load_any(pairs_input, pairs_format);
            const serfiq::PairProtocol proto =
                serfiq::generate_pairs(ds, pairs_impostor_count, pairs_seed);
            serfiq::save_pairs(proto, pairs_out);
        } else if (eval_cmd->parsed()) {
            if (eval_op != "eer" && eval_op != "fnmr-at-fmr") {
                std::cerr << "--op must be eer or fnmr-at-fmr\n";
                return 2;
            }
            if (eval_pairs.empty() && !eval_have_pairs_seed) {
                std::cerr << "evaluate needs --pairs or --pairs-seed\n";
                return 2;
            }
            const std::vector<double> ratios = eval_ratios_text.empty()
                                                   ? default_ratio_grid()
                                                   : parse_ratio_grid(eval_ratios_text);
            const serfiq::EmbeddingDataset ds = load_any(eval_input, eval_format);
            const serfiq::PairProtocol proto =
                eval_pairs.empty()
                    ? serfiq::generate_pairs(ds, eval_impostor_count, eval_pairs_seed)
                    : serfiq::load_pairs(eval_pairs);
            const serfiq::ScoreSet scores = serfiq::compute_scores(ds, proto);
            const serfiq::OperatingPoint op =
                eval_op == "eer" ? serfiq::OperatingPoint::at_eer()
                                 : serfiq::OperatingPoint::at_fmr(eval_fmr);
            for (const auto& quality_path : eval_qualities) {
                const serfiq::QualityTable table =
                    serfiq::load_quality_table(quality_path);
                const std::string label =
                    std::filesystem::path(quality_path).stem().string();
                const serfiq::ErcCurve curve =
                    serfiq::error_versus_reject(scores, table, ratios, op, label);
                const std::filesystem::path out =
                    std::filesystem::path(eval_out_dir) / (label + "_erc.csv");
                serfiq::export_curve(curve, out.string());
            }
        } else if (hist_cmd->parsed()) {
            const serfiq::QualityTable table = serfiq::load_quality_table(hist_quality);
            serfiq::export_histogram(table, hist_bins, hist_out);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
