//! Component-contiguous `.lrcvt` files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! header | layer index | component index | region table | records | aggregate blobs
//! ```
//!
//! Records are `3 × u32` grid coordinates followed by one `f32` per field.
//! Within a component they are grouped by region (site id order), row-major
//! inside each region, with voxels that have no site last. Component ids are
//! ordered by layer, so layers are contiguous as well.

use std::fs::File;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{LabelMap, VoxelGrid, NONE};
use crate::stats::{HierarchyMoments, MomentAggregate};
use crate::tessellation::Tessellation;

pub const MAGIC: &[u8; 4] = b"LRCV";
pub const VERSION: u16 = 1;

const LAYER_ENTRY: u64 = 24;
const COMPONENT_ENTRY: u64 = 52;
const REGION_ENTRY: u64 = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Layer = 0,
    Component = 1,
    Region = 2,
}

impl Scope {
    fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Scope::Layer),
            1 => Ok(Scope::Component),
            2 => Ok(Scope::Region),
            _ => Err(Error::Format(format!("unknown aggregate scope {v}"))),
        }
    }
}

/// Blob kinds; readers skip kinds they do not know.
pub mod kind {
    pub const MOMENTS: u16 = 1;
    pub const HISTOGRAM_1D: u16 = 2;
    pub const HISTOGRAM_2D: u16 = 3;
    pub const GMM: u16 = 4;
}

/// A tagged aggregate attached to a layer, component or region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateBlob {
    pub scope: Scope,
    pub owner: u32,
    pub kind: u16,
    #[serde(skip)]
    pub payload: Vec<u8>,
}

impl AggregateBlob {
    pub fn json<T: Serialize>(scope: Scope, owner: u32, kind: u16, value: &T) -> Result<Self> {
        Ok(Self { scope, owner, kind, payload: serde_json::to_vec(value)? })
    }

    pub fn moments(scope: Scope, owner: u32, agg: &MomentAggregate) -> Result<Self> {
        Self::json(scope, owner, kind::MOMENTS, agg)
    }

    pub fn decode<T: for<'de> Deserialize<'de>>(&self) -> Result<T> {
        Ok(serde_json::from_slice(&self.payload)?)
    }
}

/// Moment blobs for every layer, component and region of a roll-up.
pub fn moment_blobs(h: &HierarchyMoments) -> Result<Vec<AggregateBlob>> {
    let mut out = Vec::new();
    for (scope, aggs) in [(Scope::Layer, &h.layers), (Scope::Component, &h.components), (Scope::Region, &h.regions)] {
        for (i, a) in aggs.iter().enumerate() {
            out.push(AggregateBlob::moments(scope, i as u32, a)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Sections {
    pub layer_index: u64,
    pub component_index: u64,
    pub region_table: u64,
    pub data: u64,
    pub data_len: u64,
    pub aggregates: u64,
    pub aggregates_len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutHeader {
    pub version: u16,
    pub dims: [u32; 3],
    pub spacing: [f64; 3],
    pub fields: Vec<String>,
    pub iso_field: String,
    pub iso_values: Vec<f64>,
    pub layer_count: u32,
    pub component_count: u32,
    pub region_count: u32,
    pub sections: Sections,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerEntry {
    /// Byte range of the layer's records.
    pub offset: u64,
    pub length: u64,
    pub first_component: u32,
    pub component_count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentEntry {
    pub layer: u32,
    /// Byte range of the component's records.
    pub offset: u64,
    pub length: u64,
    pub voxel_count: u64,
    pub first_region: u32,
    pub region_count: u32,
    /// Byte range of the component's own and its regions' blobs.
    pub aggregate_offset: u64,
    pub aggregate_length: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionEntry {
    pub site: u32,
    pub component: u32,
    pub position: [f64; 3],
    /// Record range relative to the component's first record.
    pub first_record: u64,
    pub record_count: u64,
}

/// Voxel records: coordinates plus `m` field values each.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Records {
    pub m: usize,
    pub coords: Vec<[u32; 3]>,
    pub values: Vec<f32>,
}

impl Records {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn values_of(&self, i: usize) -> &[f32] {
        &self.values[i * self.m..(i + 1) * self.m]
    }

    pub fn record_bytes(m: usize) -> u64 {
        12 + 4 * m as u64
    }

    fn decode(bytes: &[u8], m: usize) -> Result<Self> {
        let rb = Self::record_bytes(m) as usize;
        if bytes.len() % rb != 0 {
            return Err(Error::Format("record section is not a whole number of records".into()));
        }
        let n = bytes.len() / rb;
        let mut r = Records { m, coords: Vec::with_capacity(n), values: Vec::with_capacity(n * m) };
        for rec in bytes.chunks_exact(rb) {
            r.coords.push([u32_at(rec, 0), u32_at(rec, 4), u32_at(rec, 8)]);
            for k in 0..m {
                r.values.push(f32::from_le_bytes(rec[12 + 4 * k..16 + 4 * k].try_into().unwrap()));
            }
        }
        Ok(r)
    }

    /// Append another record set with the same field count.
    pub fn extend(&mut self, other: &Records) {
        self.coords.extend_from_slice(&other.coords);
        self.values.extend_from_slice(&other.values);
    }
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

/// Element and byte accounting of a reduced layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayoutAccounting {
    pub n: u64,
    pub r: u64,
    pub m: u64,
    pub n_l: u64,
    pub n_c: u64,
    /// `(n − r)(m + 1) + n_l + n_c`.
    pub estimate: u64,
    /// `n (m + 1)`: every element with one coordinate slot.
    pub full_grid_elements: u64,
    /// Elements in the records with one coordinate slot per record.
    pub file_data_elements: u64,
    pub index_entries: u64,
    /// Record bytes as stored (three coordinate slots).
    pub data_bytes: u64,
    pub coordinate_bytes: u64,
    /// Coordinates as a fraction of the reduced data, one slot per record.
    pub coordinate_overhead_single_slot: f64,
    /// The same with the three stored coordinate slots.
    pub coordinate_overhead_three_slot: f64,
}

/// The element-count reduction estimate `(n − r)(m + 1) + n_l + n_c`.
pub fn reduction_estimate(n: u64, r: u64, m: u64, n_l: u64, n_c: u64) -> Result<u64> {
    if r > n {
        return Err(Error::InvalidParameter(format!("subset size {r} exceeds domain size {n}")));
    }
    Ok((n - r) * (m + 1) + n_l + n_c)
}

/// Accounting for `r` stored records of `m` fields out of `n` voxels.
pub fn accounting(n: u64, r: u64, m: u64, n_l: u64, n_c: u64) -> Result<LayoutAccounting> {
    let estimate = reduction_estimate(n, r, m, n_l, n_c)?;
    let data_bytes = r * Records::record_bytes(m as usize);
    // Stored elements are 4 bytes each; two of the three coordinate slots are
    // extra compared to the one-slot element count.
    let file_data_elements = data_bytes / 4 - 2 * r;
    let coordinate_bytes = 12 * r;
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
    Ok(LayoutAccounting {
        n,
        r,
        m,
        n_l,
        n_c,
        estimate,
        full_grid_elements: n * (m + 1),
        file_data_elements,
        index_entries: n_l + n_c,
        data_bytes,
        coordinate_bytes,
        coordinate_overhead_single_slot: ratio(r as f64, file_data_elements as f64),
        coordinate_overhead_three_slot: ratio(coordinate_bytes as f64, data_bytes as f64),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WriteSummary {
    pub path: PathBuf,
    pub manifest: PathBuf,
    pub bytes: u64,
    pub header_bytes: u64,
    pub index_bytes: u64,
    pub data_bytes: u64,
    pub aggregate_bytes: u64,
    pub accounting: LayoutAccounting,
}

/// JSON mirror of every index in a layout file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub header: LayoutHeader,
    pub layers: Vec<LayerEntry>,
    pub components: Vec<ComponentEntry>,
    pub regions: Vec<RegionEntry>,
    pub aggregates: Vec<AggregateBlob>,
    pub accounting: LayoutAccounting,
}

pub struct LayoutInput<'a> {
    pub grid: &'a VoxelGrid,
    pub labels: &'a LabelMap,
    pub tessellation: &'a Tessellation,
    pub aggregates: &'a [AggregateBlob],
    pub iso_field: &'a str,
}

struct Buf(Vec<u8>);

impl Buf {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) -> Result<()> {
        let len = u16::try_from(s.len()).map_err(|_| Error::InvalidParameter(format!("name too long: {s}")))?;
        self.u16(len);
        self.0.extend_from_slice(s.as_bytes());
        Ok(())
    }
}

fn encode_header(h: &LayoutHeader) -> Result<Vec<u8>> {
    let mut b = Buf(Vec::new());
    b.0.extend_from_slice(MAGIC);
    b.u16(h.version);
    // Header length, patched below.
    b.u32(0);
    for d in h.dims {
        b.u32(d);
    }
    for s in h.spacing {
        b.f64(s);
    }
    b.u32(h.fields.len() as u32);
    for f in &h.fields {
        b.str(f)?;
    }
    b.str(&h.iso_field)?;
    b.u32(h.iso_values.len() as u32);
    for &v in &h.iso_values {
        b.f64(v);
    }
    b.u32(h.layer_count);
    b.u32(h.component_count);
    b.u32(h.region_count);
    let s = h.sections;
    for v in [s.layer_index, s.component_index, s.region_table, s.data, s.data_len, s.aggregates, s.aggregates_len] {
        b.u64(v);
    }
    let len = b.0.len() as u32;
    b.0[6..10].copy_from_slice(&len.to_le_bytes());
    Ok(b.0)
}

/// Encode a layout in memory. Returns the file bytes and the manifest.
pub fn encode(input: &LayoutInput<'_>) -> Result<(Vec<u8>, Manifest)> {
    let LayoutInput { grid, labels, tessellation: tess, aggregates, iso_field } = *input;
    let dims = grid.dims();
    if labels.component.len() != dims.len() || tess.site_of.len() != dims.len() {
        return Err(Error::InvalidGrid("grid, labels and tessellation sizes differ".into()));
    }
    let to_u32 = |v: usize| u32::try_from(v).map_err(|_| Error::InvalidGrid("dimension exceeds u32".into()));
    let fields: Vec<&[f32]> = grid.fields().iter().map(|f| f.values.as_slice()).collect();
    let m = fields.len();
    let n_c = labels.components.len();
    let n_l = labels.layer_count();

    // Record order per component: regions by site id, then voxels without a site.
    let mut sites_of: Vec<Vec<u32>> = vec![Vec::new(); n_c];
    for (s, site) in tess.sites.iter().enumerate() {
        if site.component as usize >= n_c {
            return Err(Error::UnknownComponent(site.component));
        }
        sites_of[site.component as usize].push(s as u32);
    }
    let regions_voxels = tess.regions();
    let by_component = labels.voxels_by_component();

    for b in aggregates {
        let limit = match b.scope {
            Scope::Layer => n_l,
            Scope::Component => n_c,
            Scope::Region => tess.sites.len(),
        };
        if b.owner as usize >= limit {
            return Err(Error::InvalidParameter(format!("{:?} aggregate owner {} out of range", b.scope, b.owner)));
        }
    }
    let blobs_for = |scope: Scope, owner: u32| aggregates.iter().filter(move |b| b.scope == scope && b.owner == owner);

    let mut header = LayoutHeader {
        version: VERSION,
        dims: [to_u32(dims.nx)?, to_u32(dims.ny)?, to_u32(dims.nz)?],
        spacing: grid.spacing(),
        fields: grid.field_names().iter().map(|s| s.to_string()).collect(),
        iso_field: iso_field.to_string(),
        iso_values: labels.iso_values.clone(),
        layer_count: n_l as u32,
        component_count: n_c as u32,
        region_count: tess.sites.len() as u32,
        sections: Sections::default(),
    };
    let header_len = encode_header(&header)?.len() as u64;
    let record_bytes = Records::record_bytes(m);
    let r: u64 = by_component.iter().map(|v| v.len() as u64).sum();
    let mut s = Sections { layer_index: header_len, ..Default::default() };
    s.component_index = s.layer_index + n_l as u64 * LAYER_ENTRY;
    s.region_table = s.component_index + n_c as u64 * COMPONENT_ENTRY;
    s.data = s.region_table + tess.sites.len() as u64 * REGION_ENTRY;
    s.data_len = r * record_bytes;
    s.aggregates = s.data + s.data_len;

    let mut data = Buf(Vec::with_capacity(s.data_len as usize));
    let mut blobs = Buf(Vec::new());
    let mut blob_list = Vec::new();
    let mut push_blob = |blobs: &mut Buf, b: &AggregateBlob| {
        blobs.u8(b.scope as u8);
        blobs.u16(b.kind);
        blobs.u32(b.owner);
        blobs.u32(b.payload.len() as u32);
        blobs.0.extend_from_slice(&b.payload);
        blob_list.push(b.clone());
    };
    for l in 0..n_l as u32 {
        for b in blobs_for(Scope::Layer, l) {
            push_blob(&mut blobs, b);
        }
    }

    let mut components = Vec::with_capacity(n_c);
    let mut regions = Vec::with_capacity(tess.sites.len());
    let write_voxel = |data: &mut Buf, v: usize| {
        let c = dims.coords(v);
        for k in c {
            data.u32(k as u32);
        }
        for f in &fields {
            data.0.extend_from_slice(&f[v].to_le_bytes());
        }
    };
    for (c, info) in labels.components.iter().enumerate() {
        let offset = s.data + data.0.len() as u64;
        let aggregate_offset = s.aggregates + blobs.0.len() as u64;
        for b in blobs_for(Scope::Component, c as u32) {
            push_blob(&mut blobs, b);
        }
        let first_region = regions.len() as u32;
        let mut written = 0u64;
        for &site in &sites_of[c] {
            let vs = &regions_voxels[site as usize];
            regions.push(RegionEntry {
                site,
                component: c as u32,
                position: tess.sites[site as usize].position,
                first_record: written,
                record_count: vs.len() as u64,
            });
            for &v in vs {
                write_voxel(&mut data, v);
            }
            written += vs.len() as u64;
            for b in blobs_for(Scope::Region, site) {
                push_blob(&mut blobs, b);
            }
        }
        for &v in &by_component[c] {
            if tess.site_of[v] == NONE {
                write_voxel(&mut data, v);
                written += 1;
            }
        }
        if written != info.voxel_count as u64 {
            return Err(Error::InvalidGrid(format!("component {c}: {written} records for {} voxels", info.voxel_count)));
        }
        components.push(ComponentEntry {
            layer: info.layer,
            offset,
            length: written * record_bytes,
            voxel_count: written,
            first_region,
            region_count: sites_of[c].len() as u32,
            aggregate_offset,
            aggregate_length: s.aggregates + blobs.0.len() as u64 - aggregate_offset,
        });
    }
    s.aggregates_len = blobs.0.len() as u64;

    let mut layers = Vec::with_capacity(n_l);
    let mut next = 0usize;
    for l in 0..n_l as u32 {
        let first = next;
        while next < n_c && components[next].layer == l {
            next += 1;
        }
        let offset = components.get(first).map_or(s.data + data.0.len() as u64, |c| c.offset);
        let length = components[first..next].iter().map(|c| c.length).sum();
        layers.push(LayerEntry { offset, length, first_component: first as u32, component_count: (next - first) as u32 });
    }
    if next != n_c {
        return Err(Error::InvalidGrid("components are not ordered by layer".into()));
    }

    header.sections = s;
    let mut out = Buf(encode_header(&header)?);
    debug_assert_eq!(out.0.len() as u64, header_len);
    for l in &layers {
        out.u64(l.offset);
        out.u64(l.length);
        out.u32(l.first_component);
        out.u32(l.component_count);
    }
    for c in &components {
        out.u32(c.layer);
        out.u64(c.offset);
        out.u64(c.length);
        out.u64(c.voxel_count);
        out.u32(c.first_region);
        out.u32(c.region_count);
        out.u64(c.aggregate_offset);
        out.u64(c.aggregate_length);
    }
    for r in &regions {
        out.u32(r.site);
        out.u32(r.component);
        for p in r.position {
            out.f64(p);
        }
        out.u64(r.first_record);
        out.u64(r.record_count);
    }
    debug_assert_eq!(out.0.len() as u64, s.data);
    out.0.extend_from_slice(&data.0);
    out.0.extend_from_slice(&blobs.0);

    let acc = accounting(dims.len() as u64, r, m as u64, n_l as u64, n_c as u64)?;
    let manifest = Manifest { header, layers, components, regions, aggregates: blob_list, accounting: acc };
    Ok((out.0, manifest))
}

/// Path of the JSON manifest written next to a layout file.
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

/// Write the layout file and its JSON manifest.
pub fn build_and_write(input: &LayoutInput<'_>, path: &Path) -> Result<WriteSummary> {
    let (bytes, manifest) = encode(input)?;
    let mut f = File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    let mpath = manifest_path(path);
    std::fs::write(&mpath, serde_json::to_vec_pretty(&manifest)?)?;
    let s = manifest.header.sections;
    Ok(WriteSummary {
        path: path.to_path_buf(),
        manifest: mpath,
        bytes: bytes.len() as u64,
        header_bytes: s.layer_index,
        index_bytes: s.data - s.layer_index,
        data_bytes: s.data_len,
        aggregate_bytes: s.aggregates_len,
        accounting: manifest.accounting,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            return Err(Error::Format("truncated file".into()));
        }
        let out = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("name is not UTF-8".into()))
    }
}

fn read_range(file: &mut File, offset: u64, len: u64) -> Result<Vec<u8>> {
    file.seek(SeekFrom::Start(offset))?;
    let mut buf = vec![0u8; len as usize];
    file.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated file".into()),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

fn decode_blobs(bytes: &[u8]) -> Result<Vec<AggregateBlob>> {
    let mut c = Cursor { bytes, at: 0 };
    let mut out = Vec::new();
    while c.at < bytes.len() {
        let scope = Scope::from_u8(c.u8()?)?;
        let kind = c.u16()?;
        let owner = c.u32()?;
        let len = c.u32()? as usize;
        out.push(AggregateBlob { scope, owner, kind, payload: c.take(len)?.to_vec() });
    }
    Ok(out)
}

/// One component as stored.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentData {
    pub id: u32,
    pub entry: ComponentEntry,
    pub records: Records,
    pub regions: Vec<RegionEntry>,
    pub aggregates: Vec<AggregateBlob>,
}

/// Reader holding the header and indexes; record reads are positional.
#[derive(Debug, Clone)]
pub struct LayoutReader {
    path: PathBuf,
    pub header: LayoutHeader,
    pub layers: Vec<LayerEntry>,
    pub components: Vec<ComponentEntry>,
}

impl LayoutReader {
    pub fn open(path: &Path) -> Result<Self> {
        let mut f = File::open(path)?;
        let file_len = f.metadata()?.len();
        let mut head = [0u8; 10];
        f.read_exact(&mut head).map_err(|_| Error::Format("not a layout file (too short)".into()))?;
        if &head[0..4] != MAGIC {
            return Err(Error::Format("not a layout file (bad magic)".into()));
        }
        let header_len = u32::from_le_bytes(head[6..10].try_into().unwrap()) as u64;
        if header_len > file_len {
            return Err(Error::Format("truncated file".into()));
        }
        let header = Self::parse_header(&read_range(&mut f, 0, header_len)?)?;
        if header.version != VERSION {
            return Err(Error::Format(format!("unsupported version {}", header.version)));
        }
        let s = header.sections;
        let end = s.aggregates.checked_add(s.aggregates_len).ok_or_else(|| Error::Format("bad offsets".into()))?;
        if end != file_len || s.data + s.data_len != s.aggregates {
            return Err(Error::Format(format!("section table expects {end} bytes, file has {file_len}")));
        }
        let idx = read_range(&mut f, s.layer_index, s.data - s.layer_index)?;
        let mut c = Cursor { bytes: &idx, at: 0 };
        let mut layers = Vec::with_capacity(header.layer_count as usize);
        for _ in 0..header.layer_count {
            layers.push(LayerEntry {
                offset: c.u64()?,
                length: c.u64()?,
                first_component: c.u32()?,
                component_count: c.u32()?,
            });
        }
        let mut components = Vec::with_capacity(header.component_count as usize);
        for _ in 0..header.component_count {
            components.push(ComponentEntry {
                layer: c.u32()?,
                offset: c.u64()?,
                length: c.u64()?,
                voxel_count: c.u64()?,
                first_region: c.u32()?,
                region_count: c.u32()?,
                aggregate_offset: c.u64()?,
                aggregate_length: c.u64()?,
            });
        }
        for e in &components {
            let in_data = e.offset >= s.data && e.offset + e.length <= s.data + s.data_len;
            let in_aggs = e.aggregate_offset >= s.aggregates && e.aggregate_offset + e.aggregate_length <= end;
            if !in_data || !in_aggs || e.first_region as u64 + e.region_count as u64 > header.region_count as u64 {
                return Err(Error::Format("component index points outside the file".into()));
            }
        }
        Ok(Self { path: path.to_path_buf(), header, layers, components })
    }

    fn parse_header(bytes: &[u8]) -> Result<LayoutHeader> {
        let mut c = Cursor { bytes, at: 4 };
        let version = c.u16()?;
        let _header_len = c.u32()?;
        let dims = [c.u32()?, c.u32()?, c.u32()?];
        let spacing = [c.f64()?, c.f64()?, c.f64()?];
        let nf = c.u32()?;
        let fields = (0..nf).map(|_| c.str()).collect::<Result<Vec<_>>>()?;
        let iso_field = c.str()?;
        let ni = c.u32()?;
        let iso_values = (0..ni).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
        let layer_count = c.u32()?;
        let component_count = c.u32()?;
        let region_count = c.u32()?;
        let sections = Sections {
            layer_index: c.u64()?,
            component_index: c.u64()?,
            region_table: c.u64()?,
            data: c.u64()?,
            data_len: c.u64()?,
            aggregates: c.u64()?,
            aggregates_len: c.u64()?,
        };
        if sections.layer_index != c.at as u64 {
            return Err(Error::Format("header length mismatch".into()));
        }
        Ok(LayoutHeader {
            version,
            dims,
            spacing,
            fields,
            iso_field,
            iso_values,
            layer_count,
            component_count,
            region_count,
            sections,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn field_count(&self) -> usize {
        self.header.fields.len()
    }

    pub fn regions(&self, first: u32, count: u32) -> Result<Vec<RegionEntry>> {
        let mut f = File::open(&self.path)?;
        let bytes = read_range(&mut f, self.header.sections.region_table + first as u64 * REGION_ENTRY, count as u64 * REGION_ENTRY)?;
        let mut c = Cursor { bytes: &bytes, at: 0 };
        (0..count)
            .map(|_| {
                Ok(RegionEntry {
                    site: c.u32()?,
                    component: c.u32()?,
                    position: [c.f64()?, c.f64()?, c.f64()?],
                    first_record: c.u64()?,
                    record_count: c.u64()?,
                })
            })
            .collect()
    }

    /// Read one component's byte range, its region table and its blobs.
    pub fn load_component(&self, id: u32) -> Result<ComponentData> {
        let entry = *self.components.get(id as usize).ok_or(Error::UnknownComponent(id))?;
        let mut f = File::open(&self.path)?;
        let records = Records::decode(&read_range(&mut f, entry.offset, entry.length)?, self.field_count())?;
        if records.len() as u64 != entry.voxel_count {
            return Err(Error::Format(format!("component {id}: record count mismatch")));
        }
        let regions = self.regions(entry.first_region, entry.region_count)?;
        let aggregates = decode_blobs(&read_range(&mut f, entry.aggregate_offset, entry.aggregate_length)?)?;
        Ok(ComponentData { id, entry, records, regions, aggregates })
    }

    /// Records of a whole layer (one contiguous read).
    pub fn load_layer(&self, id: u32) -> Result<Records> {
        let entry = *self.layers.get(id as usize).ok_or_else(|| Error::Format(format!("unknown layer {id}")))?;
        let mut f = File::open(&self.path)?;
        Records::decode(&read_range(&mut f, entry.offset, entry.length)?, self.field_count())
    }

    /// The full record section.
    pub fn read_all_records(&self) -> Result<Records> {
        let s = self.header.sections;
        let mut f = File::open(&self.path)?;
        Records::decode(&read_range(&mut f, s.data, s.data_len)?, self.field_count())
    }

    /// Layer-scope blobs, stored ahead of the component blobs.
    pub fn layer_aggregates(&self) -> Result<Vec<AggregateBlob>> {
        let s = self.header.sections;
        let end = self.components.first().map_or(s.aggregates + s.aggregates_len, |c| c.aggregate_offset);
        let mut f = File::open(&self.path)?;
        decode_blobs(&read_range(&mut f, s.aggregates, end - s.aggregates)?)
    }
}

/// Open `path` and load a single component.
pub fn load_component(path: &Path, id: u32) -> Result<ComponentData> {
    LayoutReader::open(path)?.load_component(id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimate_arithmetic() {
        assert_eq!(reduction_estimate(1000, 100, 9, 2, 5).unwrap(), 9007);
        assert_eq!(reduction_estimate(50, 50, 3, 1, 4).unwrap(), 5);
        assert!(reduction_estimate(5, 6, 1, 1, 1).is_err());
    }

    #[test]
    fn accounting_identity() {
        let a = accounting(1000, 100, 9, 2, 5).unwrap();
        assert_eq!(a.estimate, a.full_grid_elements - a.file_data_elements + a.index_entries);
        assert_eq!(a.data_bytes, 100 * (12 + 36));
        let wide = accounting(1_000_000, 10_000, 100, 3, 40).unwrap();
        assert!((wide.coordinate_overhead_single_slot - 1.0 / 101.0).abs() < 1e-15);
        assert!((wide.coordinate_overhead_three_slot - 12.0 / 412.0).abs() < 1e-15);
    }
}
