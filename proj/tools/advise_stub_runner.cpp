// Deterministic model runner speaking the advise runner protocol, backed by
// the synthetic stub model. Also renders synthetic test images.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "advise/image.hpp"
#include "advise/runner.hpp"
#include "advise/stub_model.hpp"
#include "advise/tensor_store.hpp"

using namespace advise;

int main(int argc, char** argv) {
  CLI::App app{"advise stub model runner"};
  app.require_subcommand(1);

  auto* ex = app.add_subcommand("export", "write a tensor bundle for one image");
  std::string image, model = "stub", layer = "last_conv", target = "top1", out;
  ex->add_option("--image", image)->required();
  ex->add_option("--model", model)->capture_default_str();
  ex->add_option("--layer", layer)->capture_default_str();
  ex->add_option("--class", target, "top1 or a class index")->capture_default_str();
  ex->add_option("--out", out)->required();
  ex->callback([&] { write_bundle(stub::export_bundle(read_png(image), image, model, layer, target), out); });

  auto* inf = app.add_subcommand("infer", "top-5 predictions for a batch of images");
  std::string manifest;
  inf->add_option("--manifest", manifest)->required();
  inf->add_option("--out", out)->required();
  inf->callback([&] {
    std::ifstream in(manifest);
    if (!in) throw ValidationError("cannot open " + manifest);
    nlohmann::json j;
    in >> j;
    const auto req = request_from_json(j);
    nlohmann::ordered_json res;
    res["results"] = nlohmann::ordered_json::array();
    for (const auto& im : req.images) {
      try {
        res["results"].push_back(result_to_json(stub::infer_one(read_png(im.path), im.id, req.classes)));
      } catch (const std::exception& e) {
        res["results"].push_back({{"id", im.id}, {"error", e.what()}});
      }
    }
    std::ofstream o(out, std::ios::trunc);
    if (!o) throw Error("cannot write " + out);
    o << res.dump(2) << '\n';
  });

  auto* mk = app.add_subcommand("make-image", "render a deterministic synthetic RGB image");
  std::size_t height = 64, width = 64;
  std::uint64_t seed = 0;
  mk->add_option("--height", height)->capture_default_str();
  mk->add_option("--width", width)->capture_default_str();
  mk->add_option("--seed", seed)->capture_default_str();
  mk->add_option("--out", out)->required();
  mk->callback([&] { write_png(out, stub::synthetic_image(height, width, seed)); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "advise_stub_runner: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "advise_stub_runner: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
