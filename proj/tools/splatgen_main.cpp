#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "splat/errors.hpp"
#include "splat/imageio.hpp"
#include "splat/pipeline.hpp"
#include "splat/ply.hpp"
#include "splat/synthetic.hpp"

namespace fs = std::filesystem;

namespace {

struct ConfigArgs {
    std::string config_path;
    std::string preset_name;
    std::string out_dir;
    std::string data_dir;
};

void add_config_options(CLI::App* sub, ConfigArgs& args) {
    sub->add_option("--config", args.config_path, "run config JSON file");
    sub->add_option("--preset", args.preset_name,
                    "named baseline: full | overfit | toy-distill | micro");
    sub->add_option("--out-dir", args.out_dir, "override the output directory");
    sub->add_option("--data-dir", args.data_dir, "override the dataset directory");
}

splat::RunConfig resolve(const ConfigArgs& args) {
    splat::RunConfig cfg;
    if (!args.preset_name.empty())
        cfg = splat::preset(args.preset_name);
    else if (!args.config_path.empty())
        cfg = splat::load_run_config(args.config_path);
    else
        throw splat::invalid_parameter("pass --config or --preset");
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    if (!args.data_dir.empty()) cfg.data_dir = args.data_dir;
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"toy multi-view gaussian splat distillation"};
    app.require_subcommand(1);

    ConfigArgs args;
    bool eval_set = false;
    std::string image_path, decoder_ckpt, denoiser_ckpt, adapters_ckpt;
    std::string scene_path, report_path, in_path, out_path;
    std::size_t object_index = 0;
    std::uint64_t object_seed = 0;
    std::vector<int> frames = {4, 8, 16};

    CLI::App* gen = app.add_subcommand("gen-data", "render a procedural dataset");
    add_config_options(gen, args);
    gen->add_flag("--eval", eval_set, "emit the 21-view evaluation protocol");
    gen->callback([&] {
        const splat::RunConfig cfg = resolve(args);
        if (eval_set)
            splat::make_eval_set(cfg.dataset, cfg.data_dir);
        else
            splat::render_dataset(cfg.dataset, cfg.data_dir);
        std::printf("dataset written to %s\n", cfg.data_dir.c_str());
    });

    CLI::App* train = app.add_subcommand("train-decoder", "stage one training");
    add_config_options(train, args);
    train->callback([&] {
        const splat::Stage1Result r = splat::train_decoder(resolve(args));
        std::printf("train psnr %.3f dB, depth mae %.5f (extent %.3f)\n",
                    r.train_psnr, r.depth_mae, r.extent);
    });

    CLI::App* dist = app.add_subcommand("distill", "stage two LoRA distillation");
    add_config_options(dist, args);
    dist->add_option("--decoder", decoder_ckpt, "stage-one checkpoint base path");
    dist->add_option("--denoiser", denoiser_ckpt,
                     "base denoiser checkpoint (default: seeded init)");
    dist->callback([&] {
        const splat::RunConfig cfg = resolve(args);
        const std::string dec =
            decoder_ckpt.empty() ? cfg.out_dir + "/decoder" : decoder_ckpt;
        const splat::Stage2Result r = splat::distill(cfg, dec, denoiser_ckpt);
        std::printf("holdout l3d %.6f -> %.6f, chamfer %.6f -> %.6f\n",
                    r.init_holdout_l3d, r.final_holdout_l3d,
                    r.init_holdout_chamfer, r.final_holdout_chamfer);
    });

    CLI::App* inf = app.add_subcommand("infer", "single image to gaussian scene");
    add_config_options(inf, args);
    inf->add_option("--image", image_path, "conditioning image (PNG)")->required();
    inf->add_option("--decoder", decoder_ckpt, "decoder checkpoint base path");
    inf->add_option("--denoiser", denoiser_ckpt, "denoiser checkpoint base path");
    inf->add_option("--adapters", adapters_ckpt, "adapter checkpoint base path");
    inf->callback([&] {
        const splat::RunConfig cfg = resolve(args);
        const std::string dec =
            decoder_ckpt.empty() ? cfg.out_dir + "/decoder" : decoder_ckpt;
        const splat::InferResult r = splat::infer(
            cfg, splat::read_png(image_path), dec, denoiser_ckpt, adapters_ckpt);
        const std::string dir = cfg.out_dir + "/infer";
        fs::create_directories(dir);
        for (std::size_t v = 0; v < r.renders.size(); ++v) {
            char name[32];
            std::snprintf(name, sizeof(name), "/view_%02zu.png", v);
            splat::write_png(dir + name, r.renders[v]);
        }
        splat::export_ply(r.scene, dir + "/scene.ply");
        std::printf("%zu gaussians, %zu views -> %s\n", r.scene.size(),
                    r.renders.size(), dir.c_str());
    });

    CLI::App* ev = app.add_subcommand("eval", "score a scene against ground truth");
    add_config_options(ev, args);
    ev->add_option("--scene", scene_path, "gaussian scene PLY")->required();
    ev->add_option("--object", object_index, "object index in the manifest");
    ev->add_option("--report", report_path, "report path (default <out>/eval.json)");
    ev->callback([&] {
        const splat::RunConfig cfg = resolve(args);
        const splat::DatasetManifest m =
            splat::load_manifest(cfg.data_dir + "/manifest.json");
        const splat::EvalReport rep = splat::evaluate_scene(
            splat::import_ply(scene_path), m, object_index, cfg.point_seed);
        fs::create_directories(cfg.out_dir);
        const std::string path =
            report_path.empty() ? cfg.out_dir + "/eval.json" : report_path;
        splat::write_eval_report(rep, path);
        std::printf("psnr %.3f ssim %.4f chamfer %.6f fscore %.4f iou %.4f\n",
                    rep.psnr, rep.ssim, rep.chamfer, rep.fscore, rep.iou);
    });

    CLI::App* abl = app.add_subcommand("ablate-frames",
                                       "train/distill/eval per frame count");
    add_config_options(abl, args);
    abl->add_option("--frames", frames, "frame counts to compare");
    abl->callback([&] {
        const std::vector<splat::AblateRow> rows =
            splat::ablate_frames(resolve(args), frames);
        for (const auto& r : rows)
            std::printf("N=%d psnr %.3f ssim %.4f chamfer %.6f\n", r.n_views,
                        r.psnr, r.ssim, r.chamfer);
    });

    CLI::App* exp = app.add_subcommand("export-ply", "write a scene as binary PLY");
    exp->add_option("--seed", object_seed, "procedural object seed");
    exp->add_option("--in", in_path, "re-export an existing PLY instead");
    exp->add_option("--out", out_path, "destination path")->required();
    exp->callback([&] {
        const splat::GaussianScene scene =
            in_path.empty() ? splat::gen_object(object_seed)
                            : splat::import_ply(in_path);
        splat::export_ply(scene, out_path);
        std::printf("%zu gaussians -> %s\n", scene.size(), out_path.c_str());
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    } catch (const std::invalid_argument& e) { // invalid_parameter, shape_error
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const splat::numerical_error& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    } catch (const splat::contract_violation& e) {
        std::fprintf(stderr, "contract violation: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) { // data_error and other runtime failures
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
