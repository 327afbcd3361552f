#include <algorithm>
#include <cctype>

#include "cimdse/surrogate.hpp"

namespace cimdse {

namespace {

struct Builder {
  Workload w;

  void conv(const std::string& name, std::int64_t k, std::int64_t cin, std::int64_t cout, std::int64_t hout) {
    LayerDesc l;
    l.name = name;
    l.kind = LayerKind::conv;
    l.weight_rows = k * k * cin;
    l.weight_cols = cout;
    l.activations = hout * hout;
    l.ops = 2.0 * static_cast<double>(l.weight_rows) * static_cast<double>(cout) * static_cast<double>(l.activations);
    w.layers.push_back(l);
  }

  void linear(const std::string& name, std::int64_t in, std::int64_t out, std::int64_t tokens) {
    LayerDesc l;
    l.name = name;
    l.kind = LayerKind::linear;
    l.weight_rows = in;
    l.weight_cols = out;
    l.activations = tokens;
    l.ops = 2.0 * static_cast<double>(in) * static_cast<double>(out) * static_cast<double>(tokens);
    w.layers.push_back(l);
  }

  // Stationary operand of an attention matmul held in DCIM.
  void attention(const std::string& name, std::int64_t inner, std::int64_t outer, std::int64_t tokens) {
    LayerDesc l;
    l.name = name;
    l.kind = LayerKind::attention;
    l.weight_rows = inner;
    l.weight_cols = outer;
    l.activations = tokens;
    l.ops = 2.0 * static_cast<double>(inner) * static_cast<double>(outer) * static_cast<double>(tokens);
    w.layers.push_back(l);
    w.uses_dcim = true;
  }
};

struct DatasetInfo {
  std::int64_t resolution;
  std::int64_t classes;
};

DatasetInfo dataset_info(const std::string& dataset) {
  std::string d;
  for (char c : dataset) {
    if (std::isalnum(static_cast<unsigned char>(c))) d += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  if (d == "cifar10") return {32, 10};
  if (d == "cifar100") return {32, 100};
  if (d == "imagenet") return {224, 1000};
  throw Error(ErrorKind::config, "unknown dataset '" + dataset + "'");
}

Workload vgg8(const DatasetInfo& ds) {
  Builder b;
  std::int64_t h = ds.resolution;
  b.conv("conv1", 3, 3, 128, h);
  b.conv("conv2", 3, 128, 128, h);
  h /= 2;
  b.conv("conv3", 3, 128, 256, h);
  b.conv("conv4", 3, 256, 256, h);
  h /= 2;
  b.conv("conv5", 3, 256, 512, h);
  b.conv("conv6", 3, 512, 512, h);
  h /= 2;
  b.linear("fc1", 512 * h * h, 1024, 1);
  b.linear("fc2", 1024, ds.classes, 1);
  return b.w;
}

Workload resnet_basic(const DatasetInfo& ds, const std::vector<int>& blocks) {
  Builder b;
  std::int64_t h = ds.resolution;
  std::int64_t c = 64;
  if (ds.resolution >= 224) {
    h /= 2;
    b.conv("conv1", 7, 3, c, h);
    h /= 2;
  } else {
    b.conv("conv1", 3, 3, c, h);
  }
  for (std::size_t s = 0; s < blocks.size(); ++s) {
    const std::int64_t cout = 64 << s;
    for (int i = 0; i < blocks[s]; ++i) {
      const bool down = i == 0 && s > 0;
      if (down) h /= 2;
      const std::string p = "s" + std::to_string(s + 1) + "b" + std::to_string(i + 1);
      b.conv(p + "_a", 3, c, cout, h);
      b.conv(p + "_b", 3, cout, cout, h);
      if (down) b.conv(p + "_ds", 1, c, cout, h);
      c = cout;
    }
  }
  b.linear("fc", c, ds.classes, 1);
  return b.w;
}

Workload resnet50(const DatasetInfo& ds) {
  Builder b;
  std::int64_t h = ds.resolution;
  std::int64_t c = 64;
  if (ds.resolution >= 224) {
    h /= 2;
    b.conv("conv1", 7, 3, c, h);
    h /= 2;
  } else {
    b.conv("conv1", 3, 3, c, h);
  }
  const int blocks[] = {3, 4, 6, 3};
  for (int s = 0; s < 4; ++s) {
    const std::int64_t mid = 64 << s;
    const std::int64_t out = mid * 4;
    for (int i = 0; i < blocks[s]; ++i) {
      const bool down = i == 0 && s > 0;
      const std::string p = "s" + std::to_string(s + 1) + "b" + std::to_string(i + 1);
      b.conv(p + "_1x1a", 1, c, mid, h);
      if (down) h /= 2;
      b.conv(p + "_3x3", 3, mid, mid, h);
      b.conv(p + "_1x1b", 1, mid, out, h);
      if (i == 0) b.conv(p + "_ds", 1, c, out, h);
      c = out;
    }
  }
  b.linear("fc", c, ds.classes, 1);
  return b.w;
}

void transformer_block(Builder& b, const std::string& p, std::int64_t dim, std::int64_t heads, std::int64_t tokens,
                       std::int64_t window) {
  const std::int64_t head_dim = dim / heads;
  b.linear(p + "_qkv", dim, 3 * dim, tokens);
  b.attention(p + "_qk", head_dim, window * heads, tokens);
  b.attention(p + "_av", window, dim, tokens);
  b.linear(p + "_proj", dim, dim, tokens);
  b.linear(p + "_mlp1", dim, 4 * dim, tokens);
  b.linear(p + "_mlp2", 4 * dim, dim, tokens);
}

Workload vit_b(const DatasetInfo& ds) {
  Builder b;
  const std::int64_t patches = (ds.resolution / 16) * (ds.resolution / 16);
  const std::int64_t tokens = patches + 1;
  b.linear("patch_embed", 16 * 16 * 3, 768, patches);
  for (int i = 0; i < 12; ++i) transformer_block(b, "blk" + std::to_string(i + 1), 768, 12, tokens, tokens);
  b.linear("head", 768, ds.classes, 1);
  return b.w;
}

Workload swin_t(const DatasetInfo& ds) {
  Builder b;
  std::int64_t side = ds.resolution / 4;
  std::int64_t dim = 96;
  const int depths[] = {2, 2, 6, 2};
  const std::int64_t heads[] = {3, 6, 12, 24};
  const std::int64_t window = 49;
  b.linear("patch_embed", 4 * 4 * 3, dim, side * side);
  for (int s = 0; s < 4; ++s) {
    if (s > 0) {
      b.linear("merge" + std::to_string(s), 4 * dim, 2 * dim, (side / 2) * (side / 2));
      side /= 2;
      dim *= 2;
    }
    const std::int64_t win = std::min(window, side * side);
    for (int i = 0; i < depths[s]; ++i) {
      transformer_block(b, "s" + std::to_string(s + 1) + "b" + std::to_string(i + 1), dim, heads[s], side * side, win);
    }
  }
  b.linear("head", dim, ds.classes, 1);
  return b.w;
}

std::string canonical_model(const std::string& model) {
  std::string m;
  for (char c : model) {
    if (std::isalnum(static_cast<unsigned char>(c))) m += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return m;
}

}  // namespace

Workload make_workload(const std::string& model, const std::string& dataset) {
  const auto ds = dataset_info(dataset);
  const auto m = canonical_model(model);
  Workload w;
  if (m == "vgg8") {
    w = vgg8(ds);
    w.name = "VGG8";
  } else if (m == "resnet18") {
    w = resnet_basic(ds, {2, 2, 2, 2});
    w.name = "ResNet-18";
  } else if (m == "resnet34") {
    w = resnet_basic(ds, {3, 4, 6, 3});
    w.name = "ResNet-34";
  } else if (m == "resnet50") {
    w = resnet50(ds);
    w.name = "ResNet-50";
  } else if (m == "swint") {
    w = swin_t(ds);
    w.name = "Swin-T";
  } else if (m == "vitb") {
    w = vit_b(ds);
    w.name = "ViT-B";
  } else {
    throw Error(ErrorKind::config, "unknown workload '" + model + "'");
  }
  w.validate();
  return w;
}

std::vector<std::string> builtin_workload_names() {
  return {"VGG8", "ResNet-18", "ResNet-34", "ResNet-50", "Swin-T", "ViT-B"};
}

}  // namespace cimdse
