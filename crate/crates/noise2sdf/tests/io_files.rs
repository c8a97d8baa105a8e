//! File-format round trips and corruption handling.

use std::fs;

use noise2sdf::error::Error;
use noise2sdf::field::{evaluate_grid, SphereField};
use noise2sdf::geom::{synthetic_sphere, Point3, PointCloud};
use noise2sdf::io::{
    load_network, read_obj, read_ply_cloud, read_ply_mesh, read_volume, read_xyz, save_network,
    write_obj, write_ply_cloud, write_ply_mesh, write_volume, write_xyz, PlyFormat,
};
use noise2sdf::mesher::marching_cubes;
use noise2sdf::net::SdfNetwork;

fn sphere_mesh() -> noise2sdf::mesher::TriangleMesh {
    let grid = evaluate_grid(
        &SphereField::unit(),
        12,
        (Point3::new(-1.2, -1.2, -1.2), Point3::new(1.2, 1.2, 1.2)),
    )
    .unwrap();
    marching_cubes(&grid, 0.0).unwrap()
}

#[test]
fn xyz_round_trip_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cloud.xyz");
    let cloud = synthetic_sphere(100, 1);
    write_xyz(&path, &cloud).unwrap();
    let back = read_xyz(&path).unwrap();
    // Plain-text floats print in shortest round-trip form, so the values
    // come back bit-identical.
    assert_eq!(cloud.points, back.points);
    assert_eq!(cloud.normals, back.normals);
}

#[test]
fn xyz_comments_and_blank_lines_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cloud.xyz");
    fs::write(&path, "# a comment\n\n1 2 3\n4 5 6 # trailing\n").unwrap();
    let cloud = read_xyz(&path).unwrap();
    assert_eq!(cloud.len(), 2);
    assert_eq!(cloud.points[1], Point3::new(4.0, 5.0, 6.0));
}

#[test]
fn xyz_bad_column_count_is_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cloud.xyz");
    fs::write(&path, "1 2\n").unwrap();
    assert!(matches!(read_xyz(&path), Err(Error::Parse { .. })));
}

#[test]
fn ply_cloud_round_trip_f32() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = synthetic_sphere(64, 2);
    for (name, format) in [
        ("a.ply", PlyFormat::Ascii),
        ("b.ply", PlyFormat::BinaryLittleEndian),
    ] {
        let path = dir.path().join(name);
        write_ply_cloud(&path, &cloud, format).unwrap();
        let back = read_ply_cloud(&path).unwrap();
        assert_eq!(back.len(), cloud.len());
        // The wire format stores float32.
        for (a, b) in cloud.points.iter().zip(&back.points) {
            assert_eq!(a.x as f32, b.x as f32);
            assert_eq!(b.x, b.x as f32 as f64);
        }
        assert_eq!(back.normals.len(), cloud.normals.len());
    }
}

#[test]
fn ply_mesh_round_trip_preserves_topology() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = sphere_mesh();
    for (name, format) in [
        ("a.ply", PlyFormat::Ascii),
        ("b.ply", PlyFormat::BinaryLittleEndian),
    ] {
        let path = dir.path().join(name);
        write_ply_mesh(&path, &mesh, format).unwrap();
        let back = read_ply_mesh(&path).unwrap();
        assert_eq!(back.vertices.len(), mesh.vertices.len());
        assert_eq!(back.triangles, mesh.triangles);
        assert!(back.is_watertight());
    }
}

#[test]
fn ply_truncated_binary_is_corrupt() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.ply");
    let cloud = synthetic_sphere(32, 3);
    write_ply_cloud(&path, &cloud, PlyFormat::BinaryLittleEndian).unwrap();
    let data = fs::read(&path).unwrap();
    fs::write(&path, &data[..data.len() - 5]).unwrap();
    assert!(matches!(
        read_ply_cloud(&path),
        Err(Error::CorruptFile(_))
    ));
}

#[test]
fn obj_round_trip_preserves_topology() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.obj");
    let mesh = sphere_mesh();
    write_obj(&path, &mesh).unwrap();
    let back = read_obj(&path).unwrap();
    assert_eq!(back.vertices.len(), mesh.vertices.len());
    assert_eq!(back.triangles, mesh.triangles);
    assert_eq!(back.vertex_normals.len(), mesh.vertex_normals.len());
    // 1-based indexing on the wire.
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.lines().any(|l| l.starts_with("f 1//1 ") || l.contains(" 1//1")));
}

#[test]
fn obj_polygons_are_fan_triangulated() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("quad.obj");
    fs::write(
        &path,
        "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n",
    )
    .unwrap();
    let mesh = read_obj(&path).unwrap();
    assert_eq!(mesh.triangles, vec![[0, 1, 2], [0, 2, 3]]);
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.nsdf");
    let net = SdfNetwork::init(3, 24, 7).unwrap();
    save_network(&path, &net).unwrap();
    let back = load_network(&path).unwrap();
    assert_eq!(net, back);
    // Forward outputs bit-identical on 100 random queries.
    let queries = synthetic_sphere(100, 8);
    for &q in &queries.points {
        let a = net.eval(q);
        let b = back.eval(q);
        assert_eq!(a.value, b.value);
        assert_eq!(a.input_gradient, b.input_gradient);
    }
}

#[test]
fn checkpoint_truncation_detected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.nsdf");
    let net = SdfNetwork::init(2, 8, 1).unwrap();
    save_network(&path, &net).unwrap();
    let data = fs::read(&path).unwrap();
    for cut in [data.len() - 1, data.len() - 9, 10, 5] {
        fs::write(&path, &data[..cut]).unwrap();
        assert!(
            matches!(load_network(&path), Err(Error::CorruptFile(_))),
            "cut at {cut} not detected"
        );
    }
}

#[test]
fn checkpoint_header_edit_detected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.nsdf");
    let net = SdfNetwork::init(2, 8, 2).unwrap();
    save_network(&path, &net).unwrap();
    let mut data = fs::read(&path).unwrap();
    // Widths start after magic(4) + version(4) + tags(2) + count(4); bump
    // the first hidden width.
    data[14 + 4] ^= 0x01;
    fs::write(&path, &data).unwrap();
    assert!(matches!(load_network(&path), Err(Error::CorruptFile(_))));
}

#[test]
fn checkpoint_unknown_version_detected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.nsdf");
    let net = SdfNetwork::init(2, 8, 3).unwrap();
    save_network(&path, &net).unwrap();
    let mut data = fs::read(&path).unwrap();
    data[4] = 0xFE; // version little-endian low byte
    fs::write(&path, &data).unwrap();
    assert!(matches!(
        load_network(&path),
        Err(Error::UnsupportedVersion { found: 0xFE, .. })
    ));
}

#[test]
fn checkpoint_param_flip_detected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.nsdf");
    let net = SdfNetwork::init(2, 8, 4).unwrap();
    save_network(&path, &net).unwrap();
    let mut data = fs::read(&path).unwrap();
    let mid = data.len() / 2;
    data[mid] ^= 0x40;
    fs::write(&path, &data).unwrap();
    assert!(matches!(load_network(&path), Err(Error::CorruptFile(_))));
}

#[test]
fn volume_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.vol");
    let grid = evaluate_grid(
        &SphereField::unit(),
        16,
        (Point3::new(-1.1, -1.1, -1.1), Point3::new(1.1, 1.1, 1.1)),
    )
    .unwrap();
    write_volume(&path, &grid).unwrap();
    let back = read_volume(&path).unwrap();
    assert_eq!(back.resolution, grid.resolution);
    assert_eq!(back.min, grid.min);
    assert_eq!(back.max, grid.max);
    assert_eq!(back.values.len(), grid.values.len());
    for (a, b) in grid.values.iter().zip(&back.values) {
        // Stored as float32.
        assert_eq!(*a as f32, *b as f32);
        assert_eq!(*b, *b as f32 as f64);
    }
}

#[test]
fn volume_size_mismatch_is_corrupt() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.vol");
    let grid = evaluate_grid(
        &SphereField::unit(),
        4,
        (Point3::new(-1.0, -1.0, -1.0), Point3::new(1.0, 1.0, 1.0)),
    )
    .unwrap();
    write_volume(&path, &grid).unwrap();
    let data = fs::read(&path).unwrap();
    fs::write(&path, &data[..data.len() - 4]).unwrap();
    assert!(matches!(read_volume(&path), Err(Error::CorruptFile(_))));
}

#[test]
fn normals_survive_xyz_and_ply() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = synthetic_sphere(20, 9);
    assert!(cloud.has_normals());

    let xyz = dir.path().join("n.xyz");
    write_xyz(&xyz, &cloud).unwrap();
    assert!(read_xyz(&xyz).unwrap().has_normals());

    let ply = dir.path().join("n.ply");
    write_ply_cloud(&ply, &cloud, PlyFormat::BinaryLittleEndian).unwrap();
    assert!(read_ply_cloud(&ply).unwrap().has_normals());
}

#[test]
fn cloud_without_points_rejected_on_read() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.xyz");
    fs::write(&path, "# nothing here\n").unwrap();
    assert!(read_xyz(&path).is_err());
    let _ = PointCloud::default();
}
