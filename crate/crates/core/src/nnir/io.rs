//! Model files: a text manifest describing the layer list plus a blob of
//! little-endian `f64` weights, layer by layer, kernel before bias.

use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{GraphError, LayerKind, LayerSpec, LayerWeights, ModelGraph, Padding, TensorShape, WeightStore};
use crate::kv;

pub const MODEL_FORMAT: &str = "tcuflow-model/1";

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: layer `{layer}` has unsupported kind `{kind}`")]
    UnknownKind { line: usize, layer: String, kind: String },
    #[error("missing header `{0}`")]
    MissingHeader(&'static str),
    #[error("layer `{layer}`: weight blob declares {declared} values, layer needs {expected}")]
    WeightShape { layer: String, declared: usize, expected: usize },
    #[error("weight blob holds {got} bytes, manifest declares {want}")]
    BlobSize { got: usize, want: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn syntax(line: usize, message: impl Into<String>) -> ModelFileError {
    ModelFileError::Syntax { line, message: message.into() }
}

fn dims_str(d: &[usize]) -> String {
    d.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("x")
}

fn layer_attrs(kind: &LayerKind) -> String {
    match kind {
        LayerKind::Conv1D { kernel, stride, padding, filters } => {
            format!(" kernel={kernel} stride={stride} padding={} filters={filters}", padding.as_str())
        }
        LayerKind::Conv2D { kernel, stride, padding, filters } => format!(
            " kernel={} stride={} padding={} filters={filters}",
            dims_str(kernel),
            dims_str(stride),
            padding.as_str()
        ),
        LayerKind::Dense { units } => format!(" units={units}"),
        LayerKind::MaxPool1D { pool, stride } => format!(" pool={pool} stride={stride}"),
        LayerKind::MaxPool2D { pool, stride } => format!(" pool={} stride={}", dims_str(pool), dims_str(stride)),
        LayerKind::Reshape { target } => format!(" target={}", dims_str(target)),
        LayerKind::ReLU | LayerKind::Add | LayerKind::Flatten | LayerKind::GlobalAvgPool => String::new(),
    }
}

/// Render the manifest text for `g`, referencing `weights_file`.
pub fn render_manifest(g: &ModelGraph, weights_file: &str) -> String {
    let mut s = format!(
        "# tcuflow model manifest\nformat = {MODEL_FORMAT}\nname = {}\ninput = {}\noutput = {}\nweights = {weights_file}\n",
        g.name(),
        g.input_shape().dims().iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" "),
        g.output()
    );
    for l in g.layers() {
        s.push_str(&format!("layer {} {} in={}{}", l.name, l.kind.name(), l.inputs.join(","), layer_attrs(&l.kind)));
        if let Some(w) = g.weights().get(&l.name) {
            s.push_str(&format!(" kernel_len={} bias_len={}", w.kernel.len(), w.bias.len()));
        }
        s.push('\n');
    }
    s
}

fn weight_blob(g: &ModelGraph) -> Vec<u8> {
    let mut out = Vec::new();
    for l in g.layers() {
        if let Some(w) = g.weights().get(&l.name) {
            for v in w.kernel.iter().chain(&w.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

/// Write `path` (manifest) and a sibling `.weights` blob.
pub fn save_model(g: &ModelGraph, path: impl AsRef<Path>) -> Result<(), ModelFileError> {
    let path = path.as_ref();
    let blob_path = path.with_extension("weights");
    let blob_name = blob_path.file_name().unwrap().to_string_lossy().into_owned();
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |source| ModelFileError::Io { path: p, source }
    };
    std::fs::write(path, render_manifest(g, &blob_name)).map_err(io(path))?;
    std::fs::write(&blob_path, weight_blob(g)).map_err(io(&blob_path))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelGraph, ModelFileError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ModelFileError::Io { path: path.into(), source })?;
    let blob_name = text
        .lines()
        .map(kv::strip_comment)
        .filter(|l| !l.starts_with("layer "))
        .filter_map(|l| l.split_once('='))
        .find(|(k, _)| k.trim() == "weights")
        .map(|(_, v)| v.trim().to_string())
        .ok_or(ModelFileError::MissingHeader("weights"))?;
    let blob_path = path.parent().unwrap_or(Path::new(".")).join(blob_name);
    let blob = std::fs::read(&blob_path).map_err(|source| ModelFileError::Io { path: blob_path, source })?;
    parse_model(&text, &blob)
}

struct ParsedLayer {
    line: usize,
    spec: LayerSpec,
    lens: Option<(usize, usize)>,
}

/// Parse a manifest and its weight blob.
pub fn parse_model(text: &str, blob: &[u8]) -> Result<ModelGraph, ModelFileError> {
    let mut name = None;
    let mut input = None;
    let mut output = None;
    let mut format = None;
    let mut layers = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = kv::strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("layer ") {
            layers.push(parse_layer(line_no, rest)?);
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| syntax(line_no, format!("unrecognized line `{line}`")))?;
        let v = v.trim().to_string();
        match k.trim() {
            "format" => format = Some((line_no, v)),
            "name" => name = Some(v),
            "input" => {
                let dims = v
                    .split_whitespace()
                    .map(|d| d.parse::<usize>().map_err(|_| syntax(line_no, format!("bad input dim `{d}`"))))
                    .collect::<Result<Vec<_>, _>>()?;
                input = Some(TensorShape::new(dims)?);
            }
            "output" => output = Some(v),
            "weights" => {}
            other => return Err(syntax(line_no, format!("unknown header `{other}`"))),
        }
    }
    match format {
        Some((_, f)) if f == MODEL_FORMAT => {}
        Some((line, f)) => return Err(syntax(line, format!("unsupported format `{f}`"))),
        None => return Err(ModelFileError::MissingHeader("format")),
    }
    let input = input.ok_or(ModelFileError::MissingHeader("input"))?;
    let output = output.ok_or(ModelFileError::MissingHeader("output"))?;

    // Check declared weight lengths before touching the blob so errors name a layer.
    let specs: Vec<LayerSpec> = layers.iter().map(|l| l.spec.clone()).collect();
    let shapes = super::infer(&input, &specs)?;
    let mut want_bytes = 0usize;
    for l in &layers {
        let (k, b) = super::param_shape(&l.spec.kind, &shapes[&l.spec.inputs[0]]);
        match (l.spec.kind.is_parameterized(), l.lens) {
            (true, Some((dk, db))) => {
                if dk != k || db != b {
                    return Err(ModelFileError::WeightShape {
                        layer: l.spec.name.clone(),
                        declared: dk + db,
                        expected: k + b,
                    });
                }
                want_bytes += 8 * (k + b);
            }
            (true, None) => return Err(syntax(l.line, "parameterized layer needs kernel_len and bias_len")),
            (false, Some(_)) => return Err(syntax(l.line, "kernel_len/bias_len on a layer without weights")),
            (false, None) => {}
        }
    }
    if blob.len() != want_bytes {
        return Err(ModelFileError::BlobSize { got: blob.len(), want: want_bytes });
    }
    let mut values = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut weights = WeightStore::new();
    for l in &layers {
        if let Some((k, b)) = l.lens {
            let kernel: Vec<f64> = values.by_ref().take(k).collect();
            let bias: Vec<f64> = values.by_ref().take(b).collect();
            weights.insert(l.spec.name.clone(), LayerWeights { kernel, bias });
        }
    }
    Ok(ModelGraph::new(name.unwrap_or_else(|| "model".into()), input, specs, weights, output)?)
}

fn parse_layer(line: usize, rest: &str) -> Result<ParsedLayer, ModelFileError> {
    let mut tokens = rest.split_whitespace();
    let name = tokens.next().ok_or_else(|| syntax(line, "layer needs a name"))?.to_string();
    let kind_name = tokens.next().ok_or_else(|| syntax(line, "layer needs a kind"))?;
    let mut attrs: Vec<(&str, &str)> = Vec::new();
    for t in tokens {
        let (k, v) = t.split_once('=').ok_or_else(|| syntax(line, format!("attribute `{t}` is not key=value")))?;
        if attrs.iter().any(|(seen, _)| *seen == k) {
            return Err(syntax(line, format!("duplicate attribute `{k}`")));
        }
        attrs.push((k, v));
    }
    let mut used = vec![false; attrs.len()];
    let mut take = |key: &str| -> Result<&str, ModelFileError> {
        let i = attrs
            .iter()
            .position(|(k, _)| *k == key)
            .ok_or_else(|| syntax(line, format!("{kind_name} layer `{name}` needs `{key}`")))?;
        used[i] = true;
        Ok(attrs[i].1)
    };
    let num = |v: &str| v.parse::<usize>().map_err(|_| syntax(line, format!("bad number `{v}`")));
    let dims = |v: &str| v.split('x').map(num).collect::<Result<Vec<_>, _>>();
    let pair = |v: &str| -> Result<[usize; 2], ModelFileError> {
        let d = dims(v)?;
        match d.as_slice() {
            [a] => Ok([*a, *a]),
            [a, b] => Ok([*a, *b]),
            _ => Err(syntax(line, format!("expected one or two dims, got `{v}`"))),
        }
    };
    let padding = |v: &str| match v {
        "valid" => Ok(Padding::Valid),
        "same" => Ok(Padding::Same),
        _ => Err(syntax(line, format!("unknown padding `{v}`"))),
    };
    let inputs: Vec<String> = take("in")?.split(',').map(str::to_string).collect();
    let kind = match kind_name {
        "Conv1D" => LayerKind::Conv1D {
            kernel: num(take("kernel")?)?,
            stride: num(take("stride")?)?,
            padding: padding(take("padding")?)?,
            filters: num(take("filters")?)?,
        },
        "Conv2D" => LayerKind::Conv2D {
            kernel: pair(take("kernel")?)?,
            stride: pair(take("stride")?)?,
            padding: padding(take("padding")?)?,
            filters: num(take("filters")?)?,
        },
        "Dense" => LayerKind::Dense { units: num(take("units")?)? },
        "MaxPool1D" => LayerKind::MaxPool1D { pool: num(take("pool")?)?, stride: num(take("stride")?)? },
        "MaxPool2D" => LayerKind::MaxPool2D { pool: pair(take("pool")?)?, stride: pair(take("stride")?)? },
        "ReLU" => LayerKind::ReLU,
        "Add" => LayerKind::Add,
        "Flatten" => LayerKind::Flatten,
        "Reshape" => LayerKind::Reshape { target: dims(take("target")?)? },
        "GlobalAvgPool" => LayerKind::GlobalAvgPool,
        other => return Err(ModelFileError::UnknownKind { line, layer: name.to_string(), kind: other.to_string() }),
    };
    let lens = if kind.is_parameterized() {
        let k = num(take("kernel_len")?)?;
        let b = num(take("bias_len")?)?;
        Some((k, b))
    } else {
        None
    };
    if let Some(i) = used.iter().position(|u| !u) {
        return Err(syntax(line, format!("unexpected attribute `{}` for {kind_name}", attrs[i].0)));
    }
    Ok(ParsedLayer { line, spec: LayerSpec { name, kind, inputs }, lens })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnir::demo;

    #[test]
    fn round_trip_demo_model() {
        let g = demo::ecg_resnet(3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demo.model");
        save_model(&g, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, g);
        for (name, w) in g.weights() {
            let b = &back.weights()[name];
            assert!(w.kernel.iter().zip(&b.kernel).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn unknown_kind_names_kind_and_line() {
        let text = "format = tcuflow-model/1\ninput = 4\noutput = x\nweights = w\nlayer x LSTM in=input units=4\n";
        match parse_model(text, &[]) {
            Err(ModelFileError::UnknownKind { line, layer, kind }) => {
                assert_eq!((line, layer.as_str(), kind.as_str()), (5, "x", "LSTM"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_dense_shape_names_layer() {
        let text = "format = tcuflow-model/1\ninput = 4\noutput = d\nweights = w\n\
                    layer d Dense in=input units=3 kernel_len=15 bias_len=3\n";
        match parse_model(text, &[0u8; 8 * 18]) {
            Err(ModelFileError::WeightShape { layer, .. }) => assert_eq!(layer, "d"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn blob_length_checked() {
        let text = "format = tcuflow-model/1\ninput = 4\noutput = d\nweights = w\n\
                    layer d Dense in=input units=3 kernel_len=12 bias_len=3\n";
        assert!(matches!(parse_model(text, &[0u8; 10]), Err(ModelFileError::BlobSize { .. })));
        assert!(parse_model(text, &[0u8; 8 * 15]).is_ok());
    }

    #[test]
    fn attribute_errors() {
        let base = "format = tcuflow-model/1\ninput = 4\noutput = r\nweights = w\n";
        let extra = format!("{base}layer r ReLU in=input units=3\n");
        assert!(matches!(parse_model(&extra, &[]), Err(ModelFileError::Syntax { line: 5, .. })));
        let missing = format!("{base}layer r MaxPool1D in=input pool=2\n");
        assert!(matches!(parse_model(&missing, &[]), Err(ModelFileError::Syntax { line: 5, .. })));
    }
}
