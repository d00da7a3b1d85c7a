#include "mero/chain.hpp"

#include "mero/error.hpp"

namespace mero::chain {

void ModelBundle::validate() const {
  if (!box || !mask || !translator) throw ValidationError("model bundle is missing a stage");
  const auto& b = box->config();
  const auto& m = mask->config();
  const auto& t = translator->config();
  if (m.p != b.p || t.p != b.p) throw ValidationError("model bundle: stages disagree on the slot count");
  if (m.categories != b.categories || t.categories != b.categories)
    throw ValidationError("model bundle: stages disagree on the category count");
  if (schema && (schema->p != b.p || schema->category_count() != b.categories))
    throw ValidationError("model bundle: schema does not match the checkpoints");
}

std::filesystem::path resolve_checkpoint(const std::filesystem::path& dir, const std::string& stage) {
  const auto flat = dir / (stage + ".ckpt");
  if (std::filesystem::exists(flat)) return flat;
  const auto nested = dir / stage / "best.ckpt";
  if (std::filesystem::exists(nested)) return nested;
  throw NotFoundError("no " + stage + " checkpoint in " + dir.string() + " (looked for " + flat.string() + " and " +
                      nested.string() + ")");
}

ModelBundle load_models(const std::filesystem::path& dir) {
  ModelBundle m;
  m.box = std::make_shared<box::BoxGcnVae>(box::load_box_model(resolve_checkpoint(dir, "box")));
  m.mask = std::make_shared<mask::LabelMapVae>(mask::load_mask_model(resolve_checkpoint(dir, "labelmap")));
  m.translator =
      std::make_shared<translate::Translator>(translate::load_translator(resolve_checkpoint(dir, "label2obj")));
  if (std::filesystem::exists(dir / "schema.json")) m.schema = core::load_schema(dir / "schema.json");
  m.validate();
  return m;
}

GeneratedObject generate_object(const ModelBundle& models, int category, const std::vector<std::uint8_t>& part_list,
                                std::uint64_t seed) {
  GeneratedObject out;
  out.category = category;
  out.part_list = part_list;
  out.seed = seed;
  nn::Rng rng(seed);
  out.layout = box::sample_layout(*models.box, category, part_list, rng);
  out.label_map = mask::sample_label_map(*models.mask, out.layout, rng, models.canvas());
  out.sprite = translate::render_sprite(*models.translator, out.label_map);
  return out;
}

}  // namespace mero::chain
